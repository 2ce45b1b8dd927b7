#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde_json::{json, Value};

use searchpix_core::render::encode_png;
use searchpix_core::SearchResult;
use searchpix_engine::gateway::mock::{
    FixtureImageSearch, FixtureSearch, GeometricSegmenter, ScriptEntry, ScriptedLlm,
};
use searchpix_engine::gateway::LlmBackend;
use searchpix_engine::{ChatRequest, Gateway, Result};

pub fn e(prompt_id: &str, response: Value) -> ScriptEntry {
    ScriptEntry::new(prompt_id, response)
}

pub fn hyp(name: &str, category: &str) -> Value {
    json!({"entity_name": name, "visual_category": category, "entity_type": "object", "key_cues": ["cue"], "confidence": 0.8})
}

pub fn answer(name: &str) -> Value {
    let mut v = hyp(name, "object");
    v["action"] = json!("ANSWER");
    v
}

pub fn search(q: &str) -> Value {
    json!({"action": "SEARCH", "query": q})
}

pub fn think() -> Value {
    json!({"action": "THINK", "reasoning": "consolidating"})
}

pub fn result(title: &str) -> SearchResult {
    SearchResult {
        title: title.to_string(),
        url: format!("https://example.org/{}", title.replace(' ', "-")),
        snippet: format!("about {title}"),
        access_date: "2025-06-01".to_string(),
    }
}

pub fn gateway(scope: &str, script: Vec<ScriptEntry>, search: HashMap<String, Vec<SearchResult>>) -> Gateway {
    Gateway::with_backends(
        Box::new(ScriptedLlm::from_scripts([(scope.to_string(), script)])),
        Box::new(FixtureSearch::from_map(search)),
        Box::new(FixtureImageSearch::from_dir("/nonexistent").unwrap()),
        Box::new(GeometricSegmenter),
    )
}

/// Gateway whose image search serves `refs` for `entity` from `dir`.
pub fn gateway_with_refs(
    dir: &Path,
    scope: &str,
    script: Vec<ScriptEntry>,
    entity: &str,
    refs: &[&str],
) -> Gateway {
    std::fs::write(
        dir.join("image_search.json"),
        serde_json::to_string(&json!({ entity: refs })).unwrap(),
    )
    .unwrap();
    Gateway::with_backends(
        Box::new(ScriptedLlm::from_scripts([(scope.to_string(), script)])),
        Box::new(FixtureSearch::from_map(HashMap::new())),
        Box::new(FixtureImageSearch::from_dir(dir).unwrap()),
        Box::new(GeometricSegmenter),
    )
}

/// Solid image written as PNG; returns its path.
pub fn write_png(dir: &Path, name: &str, w: u32, h: u32, rgb: [u8; 3]) -> String {
    let img = image::RgbImage::from_pixel(w, h, image::Rgb(rgb));
    let path = dir.join(name);
    std::fs::write(&path, encode_png(&img)).unwrap();
    path.display().to_string()
}

/// Chat backend answering from a closure; records prompt ids in order.
pub struct FnLlm<F> {
    pub f: Mutex<F>,
    pub seen: Mutex<Vec<String>>,
}

impl<F> FnLlm<F> {
    pub fn new(f: F) -> Self {
        Self {
            f: Mutex::new(f),
            seen: Mutex::default(),
        }
    }
}

impl<F: FnMut(&ChatRequest) -> Result<String> + Send> LlmBackend for FnLlm<F> {
    fn complete(&self, _scope: &str, req: &ChatRequest) -> Result<String> {
        self.seen.lock().unwrap().push(req.prompt_id.clone());
        (self.f.lock().unwrap())(req)
    }
}

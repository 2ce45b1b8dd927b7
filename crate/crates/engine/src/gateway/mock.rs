//! Offline tool backends driven by a fixture directory.
//!
//! Layout of a fixture directory:
//!
//! ```text
//! llm/<scope>.json        scripted replies, scope = "<qa_id>.<task>" (or "<qa_id>")
//! search.json             {"<query>": [{title, url, snippet, access_date}, ...]}
//! image_search.json       {"<entity>": ["relative/or/absolute/path.png", ...]}
//! ```
//!
//! A script is an ordered list of `{"prompt_id", "response", "contains"?}`.
//! Each scope keeps its own cursor, so concurrent samples stay
//! deterministic. Running past the end of a script, or receiving a prompt id
//! other than the next expected one, is an error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::Value;

use searchpix_core::{BBox, BinaryMask, Rle, SearchResult};

use super::{ChatRequest, ImageSearchBackend, LlmBackend, SearchBackend, SegmentBackend};
use crate::error::{Result, ToolError};

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScriptEntry {
    pub prompt_id: String,
    pub response: Value,
    /// Substring the rendered prompt must contain.
    #[serde(default)]
    pub contains: Option<String>,
}

impl ScriptEntry {
    pub fn new(prompt_id: &str, response: impl Into<Value>) -> Self {
        Self {
            prompt_id: prompt_id.to_string(),
            response: response.into(),
            contains: None,
        }
    }

    fn text(&self) -> String {
        match &self.response {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

#[derive(Default)]
struct Cursor {
    entries: Vec<ScriptEntry>,
    next: usize,
}

#[derive(Default)]
pub struct ScriptedLlm {
    dir: Option<PathBuf>,
    scripts: Mutex<HashMap<String, Cursor>>,
}

impl ScriptedLlm {
    pub fn from_dir(dir: impl AsRef<Path>) -> Self {
        Self {
            dir: Some(dir.as_ref().to_path_buf()),
            scripts: Mutex::default(),
        }
    }

    pub fn from_scripts(scripts: impl IntoIterator<Item = (String, Vec<ScriptEntry>)>) -> Self {
        Self {
            dir: None,
            scripts: Mutex::new(
                scripts
                    .into_iter()
                    .map(|(k, entries)| (k, Cursor { entries, next: 0 }))
                    .collect(),
            ),
        }
    }

    /// Entries not yet consumed for `scope`.
    pub fn remaining(&self, scope: &str) -> usize {
        let scripts = self.scripts.lock().unwrap_or_else(|p| p.into_inner());
        scripts.get(scope).map_or(0, |c| c.entries.len() - c.next)
    }

    fn load(&self, scope: &str) -> Result<Vec<ScriptEntry>> {
        let Some(dir) = &self.dir else {
            return Err(ToolError::MockScript(format!("no script for scope {scope:?}")));
        };
        let mut candidates = vec![dir.join("llm").join(format!("{scope}.json"))];
        if let Some((qa_id, _)) = scope.rsplit_once('.') {
            candidates.push(dir.join("llm").join(format!("{qa_id}.json")));
        }
        let path = candidates
            .iter()
            .find(|p| p.is_file())
            .ok_or_else(|| ToolError::MockScript(format!("no script for scope {scope:?}")))?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| ToolError::MockScript(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ToolError::MockScript(format!("{}: {e}", path.display())))
    }
}

impl LlmBackend for ScriptedLlm {
    fn complete(&self, scope: &str, req: &ChatRequest) -> Result<String> {
        let mut scripts = self.scripts.lock().unwrap_or_else(|p| p.into_inner());
        if !scripts.contains_key(scope) {
            let entries = self.load(scope)?;
            scripts.insert(scope.to_string(), Cursor { entries, next: 0 });
        }
        let cursor = scripts.get_mut(scope).expect("inserted above");
        let Some(entry) = cursor.entries.get(cursor.next) else {
            return Err(ToolError::MockScript(format!(
                "script for {scope:?} exhausted after {} entries (next prompt {})",
                cursor.entries.len(),
                req.prompt_id
            )));
        };
        if entry.prompt_id != req.prompt_id {
            return Err(ToolError::MockScript(format!(
                "script for {scope:?} entry {} expects prompt {}, got {}",
                cursor.next, entry.prompt_id, req.prompt_id
            )));
        }
        if let Some(needle) = &entry.contains {
            if !req.rendered_prompt.contains(needle.as_str()) {
                return Err(ToolError::MockScript(format!(
                    "script for {scope:?} entry {}: prompt lacks {needle:?}",
                    cursor.next
                )));
            }
        }
        cursor.next += 1;
        Ok(entry.text())
    }
}

fn read_fixture_map<T: serde::de::DeserializeOwned>(path: &Path) -> Result<HashMap<String, T>> {
    if !path.is_file() {
        return Ok(HashMap::new());
    }
    let text =
        std::fs::read_to_string(path).map_err(|e| ToolError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ToolError::Config(format!("{}: {e}", path.display())))
}

/// Text search over `search.json`; unknown queries return no results.
pub struct FixtureSearch {
    results: HashMap<String, Vec<SearchResult>>,
}

impl FixtureSearch {
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            results: read_fixture_map(&dir.as_ref().join("search.json"))?,
        })
    }

    pub fn from_map(results: HashMap<String, Vec<SearchResult>>) -> Self {
        Self { results }
    }
}

impl SearchBackend for FixtureSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchResult>> {
        let mut r = self.results.get(query).cloned().unwrap_or_default();
        r.truncate(k);
        Ok(r)
    }
}

/// Reference-image search over `image_search.json`.
pub struct FixtureImageSearch {
    dir: PathBuf,
    images: HashMap<String, Vec<String>>,
}

impl FixtureImageSearch {
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        Ok(Self {
            images: read_fixture_map(&dir.join("image_search.json"))?,
            dir,
        })
    }
}

impl ImageSearchBackend for FixtureImageSearch {
    fn find_images(&self, entity: &str, k: usize) -> Result<Vec<String>> {
        Ok(self
            .images
            .get(entity)
            .map(|v| {
                v.iter()
                    .take(k)
                    .map(|u| {
                        if u.contains("://") || Path::new(u).is_absolute() {
                            u.clone()
                        } else {
                            self.dir.join(u).display().to_string()
                        }
                    })
                    .collect()
            })
            .unwrap_or_default())
    }
}

/// Segmenter that returns the filled prompt box.
#[derive(Debug, Default, Clone, Copy)]
pub struct GeometricSegmenter;

impl SegmentBackend for GeometricSegmenter {
    fn segment(&self, width: u32, height: u32, _png: &[u8], bbox: &BBox) -> Result<Rle> {
        Ok(BinaryMask::from_box(height, width, bbox).to_rle())
    }
}

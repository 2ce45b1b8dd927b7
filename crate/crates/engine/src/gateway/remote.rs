//! HTTP implementations of the tool backends.
//!
//! Wire formats:
//!
//! * chat: `POST <url>` with `{model, messages:[{role:"user", content:[text
//!   part, image_url parts...]}]}`; the reply carries `text` (or the
//!   `choices[0].message.content` of a chat-completions server).
//! * text search: `GET <url>?q=<query>&k=<k>` returning a result list, bare
//!   or under `results`.
//! * image search: `GET <url>?q=<entity>&k=<k>` returning image URLs, bare
//!   strings or objects with `url`, optionally under `images`.
//! * segmenter: `POST <base>/segment` with `{image_b64, box}` returning
//!   `{rle:{size,counts}, score}`; `GET <base>/healthz` returns
//!   `{"status":"ok"}`.
//!
//! Keys come from `PS_LLM_KEY` and `PS_SEARCH_KEY` and are sent as bearer
//! tokens. They never reach traces or error text.

use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};

use searchpix_core::{BBox, Rle, SearchResult};

use super::http::HttpTransport;
use super::{ChatRequest, ImageSearchBackend, LlmBackend, SearchBackend, SegmentBackend};
use crate::error::{Result, ToolError};

pub const LLM_KEY_VAR: &str = "PS_LLM_KEY";
pub const SEARCH_KEY_VAR: &str = "PS_SEARCH_KEY";

fn bearer(var: &str) -> Vec<(&'static str, String)> {
    match std::env::var(var) {
        Ok(k) if !k.is_empty() => vec![("Authorization", format!("Bearer {k}"))],
        _ => Vec::new(),
    }
}

pub struct HttpLlm {
    transport: Arc<HttpTransport>,
    url: String,
    model: String,
}

impl HttpLlm {
    pub fn new(transport: Arc<HttpTransport>, url: String, model: &str) -> Self {
        Self {
            transport,
            url,
            model: model.to_string(),
        }
    }

    pub fn request_body(model: &str, req: &ChatRequest) -> Value {
        let mut content = vec![json!({"type": "text", "text": req.rendered_prompt})];
        for img in &req.images {
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{}", B64.encode(&img.png[..]))},
            }));
        }
        json!({
            "model": model,
            "messages": [{"role": "user", "content": content}],
        })
    }

    pub fn reply_text(v: &Value) -> Option<String> {
        if let Some(t) = v.get("text").and_then(Value::as_str) {
            return Some(t.to_string());
        }
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
    }
}

impl LlmBackend for HttpLlm {
    fn complete(&self, _scope: &str, req: &ChatRequest) -> Result<String> {
        let body = Self::request_body(&self.model, req);
        let reply = self
            .transport
            .post_json(&self.url, &body, &bearer(LLM_KEY_VAR))
            .map_err(|e| ToolError::LlmUnreachable(e.to_string()))?;
        Self::reply_text(&reply).ok_or_else(|| ToolError::LlmUnreachable("reply has no text".into()))
    }
}

pub struct HttpSearch {
    transport: Arc<HttpTransport>,
    url: String,
}

impl HttpSearch {
    pub fn new(transport: Arc<HttpTransport>, url: String) -> Self {
        Self { transport, url }
    }

    pub fn parse_results(v: Value) -> std::result::Result<Vec<SearchResult>, String> {
        let list = match v {
            Value::Object(mut m) => m.remove("results").unwrap_or(Value::Null),
            other => other,
        };
        serde_json::from_value(list).map_err(|e| format!("bad result list: {e}"))
    }
}

impl SearchBackend for HttpSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchResult>> {
        let k = k.to_string();
        let v = self
            .transport
            .get_json(&self.url, &[("q", query), ("k", &k)], &bearer(SEARCH_KEY_VAR))
            .map_err(|e| ToolError::SearchUnreachable(e.to_string()))?;
        Self::parse_results(v).map_err(ToolError::SearchUnreachable)
    }
}

pub struct HttpImageSearch {
    transport: Arc<HttpTransport>,
    url: String,
}

impl HttpImageSearch {
    pub fn new(transport: Arc<HttpTransport>, url: String) -> Self {
        Self { transport, url }
    }

    pub fn parse_urls(v: Value) -> Vec<String> {
        let list = match v {
            Value::Object(mut m) => m.remove("images").unwrap_or(Value::Null),
            other => other,
        };
        list.as_array()
            .map(|items| {
                items
                    .iter()
                    .filter_map(|i| match i {
                        Value::String(s) => Some(s.clone()),
                        other => other.get("url").and_then(Value::as_str).map(str::to_string),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

impl ImageSearchBackend for HttpImageSearch {
    fn find_images(&self, entity: &str, k: usize) -> Result<Vec<String>> {
        let k = k.to_string();
        let v = self
            .transport
            .get_json(&self.url, &[("q", entity), ("k", &k)], &bearer(SEARCH_KEY_VAR))
            .map_err(|e| ToolError::ImageSearchUnreachable(e.to_string()))?;
        Ok(Self::parse_urls(v))
    }
}

#[derive(Debug, Deserialize)]
pub struct SegmentReply {
    pub rle: Rle,
    #[serde(default)]
    pub score: f64,
}

pub struct HttpSegmenter {
    transport: Arc<HttpTransport>,
    base: String,
}

impl HttpSegmenter {
    pub fn new(transport: Arc<HttpTransport>, base: String) -> Self {
        Self {
            transport,
            base: base.trim_end_matches('/').to_string(),
        }
    }

    pub fn request_body(png: &[u8], bbox: &BBox) -> Value {
        json!({"image_b64": B64.encode(png), "box": bbox.to_array()})
    }

    pub fn healthz(&self) -> Result<()> {
        let v = self
            .transport
            .get_json(&format!("{}/healthz", self.base), &[], &[])
            .map_err(|e| ToolError::SegmenterUnreachable(e.to_string()))?;
        match v.get("status").and_then(Value::as_str) {
            Some("ok") => Ok(()),
            _ => Err(ToolError::SegmenterUnreachable(format!("unhealthy: {v}"))),
        }
    }
}

impl SegmentBackend for HttpSegmenter {
    fn segment(&self, _width: u32, _height: u32, png: &[u8], bbox: &BBox) -> Result<Rle> {
        let body = Self::request_body(png, bbox);
        let v = self
            .transport
            .post_json(&format!("{}/segment", self.base), &body, &[])
            .map_err(|e| match e.status {
                Some(400) | Some(422) => ToolError::SegmenterBadMask(e.to_string()),
                _ => ToolError::SegmenterUnreachable(e.to_string()),
            })?;
        let reply: SegmentReply =
            serde_json::from_value(v).map_err(|e| ToolError::SegmenterBadMask(e.to_string()))?;
        Ok(reply.rle)
    }
}

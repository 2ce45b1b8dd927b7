//! Per-sample view of the gateway: renders prompts, enforces reply
//! schemas, traces every call, and keeps the sample's tool counts.

use serde_json::{json, Value};

use searchpix_core::{EvidenceItem, EvidenceSource, SearchResult, Task, ToolCounts};

use crate::config::RunConfig;
use crate::error::{Result, ToolError};
use crate::gateway::{ChatRequest, FetchedImage, Gateway, PromptImage};
use crate::prompts::PromptCatalog;
use crate::structured::{parse_structured, StructuredResponse};
use crate::trace::Trace;

pub const REASK_SUFFIX: &str = "\n\nReturn strict JSON only.";

pub struct Session<'a> {
    pub gateway: &'a Gateway,
    pub catalog: &'a PromptCatalog,
    pub config: &'a RunConfig,
    pub question: String,
    pub trace: Trace,
    pub counts: ToolCounts,
    scope: String,
}

impl<'a> Session<'a> {
    /// `scope` keys scripted transcripts, normally `<qa_id>.<task>`.
    pub fn new(
        gateway: &'a Gateway,
        catalog: &'a PromptCatalog,
        config: &'a RunConfig,
        scope: impl Into<String>,
        task: Option<Task>,
        question: impl Into<String>,
    ) -> Self {
        Self {
            gateway,
            catalog,
            config,
            question: question.into(),
            trace: Trace::new(task, config.trace_images),
            counts: ToolCounts::default(),
            scope: scope.into(),
        }
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    pub fn render(&self, prompt_id: &str, values: &[(&str, &str)]) -> Result<String> {
        self.catalog.render(prompt_id, values)
    }

    fn call(&mut self, req: &ChatRequest) -> Result<String> {
        self.trace.event(
            "llm_request",
            json!({
                "prompt_id": req.prompt_id,
                "prompt": req.rendered_prompt,
                "images": req.images.iter().map(|i| json!({"label": i.label, "sha256": i.digest()})).collect::<Vec<_>>(),
            }),
        );
        self.counts.llm_calls += 1;
        match self.gateway.chat(&self.scope, req) {
            Ok(raw) => {
                self.trace
                    .event("llm_response", json!({"prompt_id": req.prompt_id, "raw": raw}));
                Ok(raw)
            }
            Err(e) => {
                self.trace.event(
                    "tool_error",
                    json!({"prompt_id": req.prompt_id, "code": e.code(), "message": e.to_string()}),
                );
                Err(e)
            }
        }
    }

    /// Send a rendered prompt and parse the reply as `T`. A reply that fails
    /// the extraction ladder is re-asked once with a strict-JSON reminder.
    pub fn chat<T: StructuredResponse>(
        &mut self,
        prompt_id: &str,
        prompt: String,
        images: Vec<PromptImage>,
    ) -> Result<T> {
        let mut req = ChatRequest::text(prompt_id, prompt).with_images(images);
        let raw = self.call(&req)?;
        let first_err = match parse_structured::<T>(&raw) {
            Ok(v) => return Ok(v),
            Err(e) => e,
        };
        self.trace.event(
            "parse_error",
            json!({"prompt_id": prompt_id, "detail": first_err}),
        );
        req.rendered_prompt.push_str(REASK_SUFFIX);
        let raw = self.call(&req)?;
        parse_structured::<T>(&raw).map_err(|detail| {
            self.trace
                .event("parse_error", json!({"prompt_id": prompt_id, "detail": detail}));
            ToolError::SchemaViolation {
                prompt_id: prompt_id.to_string(),
                detail,
            }
        })
    }

    /// Render then [`Session::chat`].
    pub fn ask<T: StructuredResponse>(
        &mut self,
        prompt_id: &str,
        values: &[(&str, &str)],
        images: Vec<PromptImage>,
    ) -> Result<T> {
        let prompt = self.render(prompt_id, values)?;
        self.chat(prompt_id, prompt, images)
    }

    /// Text search with `k_results` results; traced and counted even when
    /// served from cache.
    pub fn search_text(&mut self, query: &str) -> Result<Vec<SearchResult>> {
        self.counts.searches += 1;
        match self.gateway.search_text(query, self.config.k_results) {
            Ok((results, cached)) => {
                self.trace.event(
                    "search",
                    json!({"query": query, "cached": cached, "results": results}),
                );
                Ok(results)
            }
            Err(e) => {
                self.trace.event(
                    "tool_error",
                    json!({"op": "search", "query": query, "code": e.code(), "message": e.to_string()}),
                );
                Err(e)
            }
        }
    }

    /// Search and wrap the results as the next evidence item.
    pub fn search_evidence(&mut self, round: u32, query: &str) -> Result<EvidenceItem> {
        let results = self.search_text(query)?;
        Ok(EvidenceItem {
            round,
            query: query.to_string(),
            results,
            source: EvidenceSource::TextSearch,
        })
    }

    /// Up to `k` reference images of `entity`. Image-search failures and
    /// individual fetch failures are traced and skipped.
    pub fn search_images(&mut self, entity: &str, k: usize) -> Vec<FetchedImage> {
        if k == 0 {
            return Vec::new();
        }
        let uris = match self.gateway.find_reference_images(entity, k) {
            Ok(u) => u,
            Err(e) => {
                self.trace
                    .warn(format!("image search for {entity:?} failed: {e}"));
                return Vec::new();
            }
        };
        self.trace
            .event("image_search", json!({"entity": entity, "uris": uris}));
        let mut out = Vec::new();
        for uri in uris {
            match self.gateway.fetch_image(&uri) {
                Ok(img) => out.push(img),
                Err(e) => self.trace.warn(format!("reference image skipped: {e}")),
            }
        }
        out
    }

    pub fn fetch_image(&mut self, uri: &str) -> Result<FetchedImage> {
        self.gateway.fetch_image(uri).inspect_err(|e| {
            self.trace.event(
                "tool_error",
                json!({"op": "fetch_image", "uri": uri, "code": e.code(), "message": e.to_string()}),
            );
        })
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.trace.warn(message);
    }

    pub fn event(&mut self, kind: &str, data: Value) {
        self.trace.event(kind, data);
    }

    /// Keep a composed image in the trace (when image capture is on).
    pub fn trace_image(&mut self, stage: &str, png: &[u8]) {
        self.trace.image(stage, png);
    }
}

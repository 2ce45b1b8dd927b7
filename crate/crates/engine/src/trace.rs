//! Per-sample event log. Every outbound tool call and its raw response is
//! recorded before the parsed result is handed back to the caller.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use searchpix_core::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    pub kind: String,
    #[serde(default)]
    pub data: Value,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    task: Option<Task>,
    events: Vec<TraceEvent>,
    images: Vec<(String, Vec<u8>)>,
    stage_counts: BTreeMap<String, u32>,
    capture_images: bool,
}

impl Trace {
    pub fn new(task: Option<Task>, capture_images: bool) -> Self {
        Self {
            task,
            capture_images,
            ..Self::default()
        }
    }

    pub fn event(&mut self, kind: &str, data: Value) {
        let seq = self.events.len() as u32 + 1;
        self.events.push(TraceEvent {
            seq,
            task: self.task,
            kind: kind.to_string(),
            data,
        });
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.event("warning", Value::String(message.into()));
    }

    /// Keep a composed image as `<task>_<stage>_<n>.png` when image capture
    /// is on.
    pub fn image(&mut self, stage: &str, png: &[u8]) {
        if !self.capture_images {
            return;
        }
        let n = self.stage_counts.entry(stage.to_string()).or_insert(0);
        *n += 1;
        let prefix = self.task.map(|t| format!("{t}_")).unwrap_or_default();
        let name = format!("{prefix}{stage}_{n}.png");
        self.event("image", serde_json::json!({ "file": name }));
        self.images.push((name, png.to_vec()));
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.events
            .iter()
            .filter(|e| e.kind == "warning")
            .filter_map(|e| e.data.as_str())
    }

    pub fn events_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a TraceEvent> + 'a {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn images(&self) -> &[(String, Vec<u8>)] {
        &self.images
    }
}

/// Write traces grouped by QA id: `<dir>/<qa_id>/events.jsonl` plus any
/// captured images. Traces for one id are concatenated in the given order.
pub fn write_traces<'a>(
    dir: &Path,
    traces: impl IntoIterator<Item = (&'a str, &'a Trace)>,
) -> std::io::Result<()> {
    let mut grouped: BTreeMap<&str, Vec<&Trace>> = BTreeMap::new();
    for (qa_id, t) in traces {
        grouped.entry(qa_id).or_default().push(t);
    }
    for (qa_id, ts) in grouped {
        let sub = dir.join(qa_id);
        std::fs::create_dir_all(&sub)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(sub.join("events.jsonl"))?);
        for t in &ts {
            for e in t.events() {
                writeln!(f, "{}", serde_json::to_string(e)?)?;
            }
        }
        f.flush()?;
        for t in ts {
            for (name, png) in t.images() {
                std::fs::write(sub.join(name), png)?;
            }
        }
    }
    Ok(())
}

pub fn read_events(path: &Path) -> std::io::Result<Vec<TraceEvent>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

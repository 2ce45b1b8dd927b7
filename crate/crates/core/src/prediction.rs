//! Prediction records: one JSON object per line.
//!
//! Each record carries exactly one payload key matching its task
//! (`pred_bbox`, `pred_mask` or `pred_index`); a failed sample keeps the key
//! with a `null` value. Fields this crate does not know about are preserved
//! through read/write.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::mask::Rle;
use crate::types::{EvidenceItem, TargetHypothesis};

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Ground(Option<BBox>),
    Seg(Option<Rle>),
    Vqa(Option<usize>),
}

impl Payload {
    pub fn task(&self) -> Task {
        match self {
            Payload::Ground(_) => Task::Ground,
            Payload::Seg(_) => Task::Seg,
            Payload::Vqa(_) => Task::Vqa,
        }
    }

    pub fn key(task: Task) -> &'static str {
        match task {
            Task::Ground => "pred_bbox",
            Task::Seg => "pred_mask",
            Task::Vqa => "pred_index",
        }
    }

    pub fn is_absent(&self) -> bool {
        matches!(
            self,
            Payload::Ground(None) | Payload::Seg(None) | Payload::Vqa(None)
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCounts {
    pub llm_calls: u32,
    pub searches: u32,
    pub segment_calls: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub qa_id: String,
    pub payload: Payload,
    pub hypothesis: Option<TargetHypothesis>,
    pub trace_ref: String,
    pub tool_counts: ToolCounts,
    /// Box the segmentation prompt was built from (diagnostic, seg only).
    pub bound_bbox: Option<BBox>,
    pub evidence: Vec<EvidenceItem>,
    pub error: Option<String>,
    pub wall_ms: Option<u64>,
    pub extra: Map<String, Value>,
}

const KNOWN: [&str; 11] = [
    "qa_id",
    "task",
    "pred_bbox",
    "pred_mask",
    "pred_index",
    "hypothesis",
    "trace_ref",
    "tool_counts",
    "bound_bbox",
    "evidence",
    "error",
];

impl PredictionRecord {
    pub fn new(qa_id: impl Into<String>, payload: Payload) -> Self {
        Self {
            qa_id: qa_id.into(),
            payload,
            hypothesis: None,
            trace_ref: String::new(),
            tool_counts: ToolCounts::default(),
            bound_bbox: None,
            evidence: Vec::new(),
            error: None,
            wall_ms: None,
            extra: Map::new(),
        }
    }

    pub fn task(&self) -> Task {
        self.payload.task()
    }

    pub fn to_value(&self) -> Value {
        let mut m = self.extra.clone();
        m.insert("qa_id".into(), Value::String(self.qa_id.clone()));
        m.insert("task".into(), Value::String(self.task().as_str().into()));
        let payload = match &self.payload {
            Payload::Ground(b) => json(b),
            Payload::Seg(r) => json(r),
            Payload::Vqa(i) => json(i),
        };
        m.insert(Payload::key(self.task()).into(), payload);
        m.insert("hypothesis".into(), json(&self.hypothesis));
        m.insert("trace_ref".into(), Value::String(self.trace_ref.clone()));
        m.insert("tool_counts".into(), json(&self.tool_counts));
        if let Some(b) = &self.bound_bbox {
            m.insert("bound_bbox".into(), json(b));
        }
        if !self.evidence.is_empty() {
            m.insert("evidence".into(), json(&self.evidence));
        }
        if let Some(e) = &self.error {
            m.insert("error".into(), Value::String(e.clone()));
        }
        match self.wall_ms {
            Some(ms) => {
                m.insert("wall_ms".into(), Value::from(ms));
            }
            None => {
                m.remove("wall_ms");
            }
        }
        Value::Object(m)
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let Value::Object(mut m) = v else {
            return Err(Error::MalformedPrediction("record is not an object".into()));
        };
        fn take<T: serde::de::DeserializeOwned>(m: &mut Map<String, Value>, k: &str) -> Result<T> {
            let v = m.remove(k).unwrap_or(Value::Null);
            serde_json::from_value(v).map_err(|e| Error::MalformedPrediction(format!("{k}: {e}")))
        }
        let qa_id: String = take(&mut m, "qa_id")?;
        let task: Task = take(&mut m, "task")?;
        let present: Vec<&str> = ["pred_bbox", "pred_mask", "pred_index"]
            .into_iter()
            .filter(|k| m.contains_key(*k))
            .collect();
        if present != [Payload::key(task)] {
            return Err(Error::MalformedPrediction(format!(
                "{qa_id}: task {task} needs exactly one payload key {}, found {present:?}",
                Payload::key(task)
            )));
        }
        let payload = match task {
            Task::Ground => Payload::Ground(take(&mut m, "pred_bbox")?),
            Task::Seg => Payload::Seg(take(&mut m, "pred_mask")?),
            Task::Vqa => Payload::Vqa(take(&mut m, "pred_index")?),
        };
        let trace_ref: Option<String> = take(&mut m, "trace_ref")?;
        let tool_counts: Option<ToolCounts> = take(&mut m, "tool_counts")?;
        let evidence: Option<Vec<EvidenceItem>> = take(&mut m, "evidence")?;
        let rec = PredictionRecord {
            qa_id,
            payload,
            hypothesis: take(&mut m, "hypothesis")?,
            trace_ref: trace_ref.unwrap_or_default(),
            tool_counts: tool_counts.unwrap_or_default(),
            bound_bbox: take(&mut m, "bound_bbox")?,
            evidence: evidence.unwrap_or_default(),
            error: take(&mut m, "error")?,
            wall_ms: m.get("wall_ms").and_then(Value::as_u64),
            extra: {
                m.remove("wall_ms");
                debug_assert!(KNOWN.iter().all(|k| !m.contains_key(*k)));
                m
            },
        };
        Ok(rec)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_value()).expect("record serializes")
    }
}

fn json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("value serializes")
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", r.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| Error::MalformedPrediction(format!("line {}: {e}", n + 1)))?;
        out.push(PredictionRecord::from_value(v)?);
    }
    Ok(out)
}

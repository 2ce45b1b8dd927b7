//! Parsing model replies into typed records.
//!
//! Replies are tried as-is, then with markdown code fences stripped, then as
//! the first balanced `{...}` object in the text. A record is accepted only
//! if it is a JSON object carrying every required key for its type and it
//! deserializes into that type.

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use searchpix_core::{AgentAction, AppearanceProfile, TargetHypothesis};

/// A reply shape with the keys that must be present.
pub trait StructuredResponse: DeserializeOwned {
    const REQUIRED: &'static [&'static str];
}

/// Contents of the first fenced code block, if any.
pub fn strip_code_fences(raw: &str) -> Option<&str> {
    let start = raw.find("```")?;
    let after = &raw[start + 3..];
    // skip an info string such as `json`
    let body_start = after.find(['\n', ' ', '{', '[']).unwrap_or(0);
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim())
}

/// First balanced top-level `{...}`, respecting string literals.
pub fn first_balanced_object(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let mut search_from = 0;
    while let Some(off) = raw[search_from..].find('{') {
        let start = search_from + off;
        let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        let cand = &raw[start..=i];
                        if serde_json::from_str::<Value>(cand).is_ok() {
                            return Some(cand);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        search_from = start + 1;
    }
    None
}

fn accept<T: StructuredResponse>(text: &str) -> Result<T, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("not JSON: {e}"))?;
    let Value::Object(map) = &value else {
        return Err("top-level value is not an object".to_string());
    };
    if let Some(missing) = T::REQUIRED.iter().find(|k| !map.contains_key(**k)) {
        return Err(format!("missing required field {missing:?}"));
    }
    serde_json::from_value(value).map_err(|e| format!("field type error: {e}"))
}

/// Run the extraction ladder over one raw reply.
pub fn parse_structured<T: StructuredResponse>(raw: &str) -> Result<T, String> {
    let mut last_err = String::from("empty reply");
    let mut tried: Vec<&str> = Vec::new();
    let candidates = [
        Some(raw.trim()),
        strip_code_fences(raw),
        first_balanced_object(raw),
    ];
    for cand in candidates.into_iter().flatten() {
        if cand.is_empty() || tried.contains(&cand) {
            continue;
        }
        tried.push(cand);
        match accept::<T>(cand) {
            Ok(v) => return Ok(v),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

impl StructuredResponse for Value {
    const REQUIRED: &'static [&'static str] = &[];
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Decomposition {
    pub sub_questions: Vec<String>,
}
impl StructuredResponse for Decomposition {
    const REQUIRED: &'static [&'static str] = &["sub_questions"];
}

impl StructuredResponse for AgentAction {
    const REQUIRED: &'static [&'static str] = &["action"];
}

impl StructuredResponse for TargetHypothesis {
    const REQUIRED: &'static [&'static str] = &["entity_name"];
}

impl StructuredResponse for AppearanceProfile {
    const REQUIRED: &'static [&'static str] = &["visual_description"];
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct VerificationReply {
    pub is_consistent: bool,
    pub consistency_score: f64,
    #[serde(default)]
    pub issues: Vec<String>,
    #[serde(default)]
    pub followup_queries: Vec<String>,
}
impl StructuredResponse for VerificationReply {
    const REQUIRED: &'static [&'static str] = &["is_consistent", "consistency_score"];
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DirectGroundReply {
    pub bbox: Option<Vec<f64>>,
    #[serde(default)]
    pub confidence: f64,
    #[serde(default)]
    pub reason: String,
}
impl StructuredResponse for DirectGroundReply {
    const REQUIRED: &'static [&'static str] = &["bbox"];
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Detection {
    #[serde(default)]
    pub label: String,
    pub bbox: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DetectionReply {
    pub detections: Vec<Detection>,
}
impl StructuredResponse for DetectionReply {
    const REQUIRED: &'static [&'static str] = &["detections"];
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SaliencyEntry {
    pub id: String,
    pub saliency_score: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SaliencyReply {
    pub scores: Vec<SaliencyEntry>,
}
impl StructuredResponse for SaliencyReply {
    const REQUIRED: &'static [&'static str] = &["scores"];
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ScoreReply {
    pub support_score: f64,
    pub contradiction_score: f64,
    #[serde(default)]
    pub confidence: f64,
    #[serde(default)]
    pub reason: String,
}
impl StructuredResponse for ScoreReply {
    const REQUIRED: &'static [&'static str] = &["support_score", "contradiction_score"];
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RefMatchReply {
    pub match_score: f64,
    #[serde(default)]
    pub reason: String,
}
impl StructuredResponse for RefMatchReply {
    const REQUIRED: &'static [&'static str] = &["match_score"];
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct JointRankReply {
    pub best_candidate_id: String,
    #[serde(default)]
    pub runner_up_candidate_id: String,
    #[serde(default)]
    pub confidence: f64,
    #[serde(default)]
    pub reason: String,
}
impl StructuredResponse for JointRankReply {
    const REQUIRED: &'static [&'static str] = &["best_candidate_id"];
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SelectionReply {
    pub selected_index: i64,
    #[serde(default)]
    pub confidence: f64,
    #[serde(default)]
    pub reason: String,
    /// Optional per-option scores; when present and complete their argmax
    /// decides the answer.
    #[serde(default)]
    pub option_scores: Option<Vec<f64>>,
}
impl StructuredResponse for SelectionReply {
    const REQUIRED: &'static [&'static str] = &["selected_index"];
}

/// Round a model score to an integer in `0..=5`. Returns the value and
/// whether clamping changed it.
pub fn clamp_score_0_5(v: f64) -> (u8, bool) {
    if !v.is_finite() {
        return (0, true);
    }
    let r = v.round();
    let c = r.clamp(0.0, 5.0);
    (c as u8, c != r)
}

//! Shared domain values: hypotheses, evidence, agent actions, candidates.

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub uri: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Device,
    Person,
    Character,
    Vehicle,
    #[default]
    Object,
}

impl EntityType {
    /// Lenient parse; anything unrecognised is an `Object`.
    pub fn from_loose(s: &str) -> Self {
        match s.trim().to_ascii_lowercase().as_str() {
            "device" => EntityType::Device,
            "person" => EntityType::Person,
            "character" => EntityType::Character,
            "vehicle" => EntityType::Vehicle,
            _ => EntityType::Object,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityType::Device => "device",
            EntityType::Person => "person",
            EntityType::Character => "character",
            EntityType::Vehicle => "vehicle",
            EntityType::Object => "object",
        }
    }
}

impl<'de> Deserialize<'de> for EntityType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = Option::<String>::deserialize(d)?;
        Ok(s.as_deref().map(EntityType::from_loose).unwrap_or_default())
    }
}

pub const MAX_KEY_CUES: usize = 8;

fn default_category() -> String {
    "object".to_string()
}

/// The resolved hidden entity: name, visual category, and cues that can be
/// checked against pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetHypothesis {
    pub entity_name: String,
    #[serde(default = "default_category")]
    pub visual_category: String,
    #[serde(default)]
    pub entity_type: EntityType,
    #[serde(default)]
    pub key_cues: Vec<String>,
    #[serde(default)]
    pub confidence: f64,
    #[serde(default)]
    pub remaining_ambiguities: Vec<String>,
}

impl TargetHypothesis {
    pub fn new(entity_name: impl Into<String>, visual_category: impl Into<String>) -> Self {
        Self {
            entity_name: entity_name.into(),
            visual_category: visual_category.into(),
            entity_type: EntityType::Object,
            key_cues: Vec::new(),
            confidence: 0.0,
            remaining_ambiguities: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entity_name.trim().is_empty() {
            return Err(Error::InvalidHypothesis("empty entity_name".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidHypothesis(format!(
                "confidence {} outside [0,1]",
                self.confidence
            )));
        }
        if self.key_cues.len() > MAX_KEY_CUES {
            return Err(Error::InvalidHypothesis(format!(
                "{} key cues (max {MAX_KEY_CUES})",
                self.key_cues.len()
            )));
        }
        Ok(())
    }

    /// Bring model output inside the invariants: clamp confidence, drop
    /// blank cues, keep at most [`MAX_KEY_CUES`]. Returns what was changed.
    pub fn normalize(&mut self) -> Vec<String> {
        let mut notes = Vec::new();
        self.entity_name = self.entity_name.trim().to_string();
        if self.visual_category.trim().is_empty() {
            self.visual_category = default_category();
        }
        if !self.confidence.is_finite() {
            notes.push(format!("confidence {} replaced by 0", self.confidence));
            self.confidence = 0.0;
        } else if !(0.0..=1.0).contains(&self.confidence) {
            notes.push(format!("confidence {} clamped", self.confidence));
            self.confidence = self.confidence.clamp(0.0, 1.0);
        }
        self.key_cues.retain(|c| !c.trim().is_empty());
        if self.key_cues.len() > MAX_KEY_CUES {
            notes.push(format!("key_cues truncated from {}", self.key_cues.len()));
            self.key_cues.truncate(MAX_KEY_CUES);
        }
        notes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub url: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default)]
    pub access_date: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceSource {
    TextSearch,
    ImageSearch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub round: u32,
    pub query: String,
    pub results: Vec<SearchResult>,
    pub source: EvidenceSource,
}

/// Ordered search transcript. Round numbers strictly increase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvidenceLog {
    items: Vec<EvidenceItem>,
}

impl EvidenceLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, item: EvidenceItem) -> Result<()> {
        if item.round == 0 || self.items.last().is_some_and(|l| l.round >= item.round) {
            return Err(Error::InvalidHypothesis(format!(
                "evidence round {} does not follow {:?}",
                item.round,
                self.items.last().map(|l| l.round)
            )));
        }
        self.items.push(item);
        Ok(())
    }

    pub fn last_round(&self) -> u32 {
        self.items.last().map_or(0, |i| i.round)
    }

    pub fn items(&self) -> &[EvidenceItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Plain-text rendering used inside prompts.
    pub fn render(&self) -> String {
        if self.items.is_empty() {
            return "(no evidence yet)".to_string();
        }
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&format!("[Round {}] Query: {}\n", item.round, item.query));
            if item.results.is_empty() {
                out.push_str("  (no results)\n");
            }
            for (i, r) in item.results.iter().enumerate() {
                out.push_str(&format!("  {}. {} ({})\n", i + 1, r.title, r.url));
                if !r.snippet.is_empty() {
                    out.push_str(&format!("     {}\n", r.snippet));
                }
            }
        }
        out.trim_end().to_string()
    }
}

/// One step chosen by the resolution agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "UPPERCASE")]
pub enum AgentAction {
    Search { query: String },
    Think { reasoning: String },
    Answer(TargetHypothesis),
}

impl AgentAction {
    pub fn name(&self) -> &'static str {
        match self {
            AgentAction::Search { .. } => "SEARCH",
            AgentAction::Think { .. } => "THINK",
            AgentAction::Answer(_) => "ANSWER",
        }
    }

    /// Whether this action spends one of the agent's rounds.
    pub fn consumes_round(&self) -> bool {
        !matches!(self, AgentAction::Think { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateSource {
    Direct,
    Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub bbox: BBox,
    pub source: CandidateSource,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<f64>,
}

impl Candidate {
    /// 1-based position parsed from `candidate_N`, if the id has that form.
    pub fn ordinal(&self) -> Option<usize> {
        self.candidate_id
            .strip_prefix("candidate_")
            .and_then(|n| n.parse().ok())
    }
}

pub fn candidate_id(index: usize) -> String {
    format!("candidate_{}", index + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    pub support: u8,
    pub contradiction: u8,
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub match_score: Option<u8>,
    pub confidence: f64,
    pub fused: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppearanceProfile {
    pub visual_description: String,
    #[serde(default)]
    pub shape: String,
    #[serde(default)]
    pub color: String,
    #[serde(default)]
    pub distinctive_features: Vec<String>,
}

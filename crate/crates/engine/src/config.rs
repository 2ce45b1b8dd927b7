//! Run configuration: loop budgets, fusion weights and ablation variants,
//! thresholds, rendering, and tool endpoints.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use searchpix_core::render::RenderSpec;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToolError};

/// Weights and switches for candidate score fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionWeights {
    pub w_sup: f64,
    pub w_con: f64,
    pub w_ref: f64,
    pub w_dir: f64,
    pub use_contradiction: bool,
    pub use_direct_bonus: bool,
    pub use_ref_match: bool,
    pub use_fallback: bool,
    pub include_direct_candidate: bool,
    pub support_only: bool,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            w_sup: 1.0,
            w_con: 1.0,
            w_ref: 0.5,
            w_dir: 1.0,
            use_contradiction: true,
            use_direct_bonus: true,
            use_ref_match: true,
            use_fallback: true,
            include_direct_candidate: true,
            support_only: false,
        }
    }
}

impl FusionWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_sup, self.w_con, self.w_ref, self.w_dir];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ToolError::Config(format!("fusion weights must be >= 0: {ws:?}")));
        }
        Ok(())
    }
}

/// Named ablation settings; each flips exactly one switch of the full system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    NoContradiction,
    NoDirectBonus,
    SupportOnly,
    NoRefMatch,
    DirectOnly,
    NoDirectCand,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoContradiction,
        Variant::NoDirectBonus,
        Variant::SupportOnly,
        Variant::NoRefMatch,
        Variant::DirectOnly,
        Variant::NoDirectCand,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoContradiction => "no_contradiction",
            Variant::NoDirectBonus => "no_direct_bonus",
            Variant::SupportOnly => "support_only",
            Variant::NoRefMatch => "no_ref_match",
            Variant::DirectOnly => "direct_only",
            Variant::NoDirectCand => "no_direct_cand",
        }
    }

    /// Flags of the full system with this variant's switch applied. Weights
    /// are kept from `base`.
    pub fn apply(&self, base: &FusionWeights) -> FusionWeights {
        let mut w = FusionWeights {
            use_contradiction: true,
            use_direct_bonus: true,
            use_ref_match: true,
            use_fallback: true,
            include_direct_candidate: true,
            support_only: false,
            ..base.clone()
        };
        match self {
            Variant::Full => {}
            Variant::NoContradiction => w.use_contradiction = false,
            Variant::NoDirectBonus => w.use_direct_bonus = false,
            Variant::SupportOnly => w.support_only = true,
            Variant::NoRefMatch => w.use_ref_match = false,
            Variant::DirectOnly => w.use_fallback = false,
            Variant::NoDirectCand => w.include_direct_candidate = false,
        }
        w
    }
}

impl FromStr for Variant {
    type Err = ToolError;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ToolError::Config(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Verification score below which a hypothesis is repaired.
    pub verify: f64,
    /// Best fused score below which visual repair runs.
    pub repair: f64,
    /// Contradiction score at or above which visual repair runs.
    pub repair_contradiction: u8,
    /// Candidates overlapping a kept one above this IoU are dropped.
    pub dedup_iou: f64,
    /// Box/mask agreement required by the dataset validator.
    pub box_mask: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            verify: 3.0,
            repair: 1.0,
            repair_contradiction: 4,
            dedup_iou: 0.9,
            box_mask: 0.5,
        }
    }
}

/// Where a tool lives: a `mock:<dir>` fixture directory or an HTTP URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Mock(PathBuf),
    Http(String),
    Unset,
}

impl Endpoint {
    pub fn parse(s: &str) -> Endpoint {
        let s = s.trim();
        if s.is_empty() {
            Endpoint::Unset
        } else if let Some(dir) = s.strip_prefix("mock:") {
            Endpoint::Mock(PathBuf::from(dir))
        } else {
            Endpoint::Http(s.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    pub llm_endpoint: String,
    pub search_endpoint: String,
    pub image_search_endpoint: String,
    pub segment_endpoint: String,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Base delay between retries; doubles each attempt.
    pub retry_backoff_ms: u64,
    pub max_inflight: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            llm_endpoint: String::new(),
            search_endpoint: String::new(),
            image_search_endpoint: String::new(),
            segment_endpoint: String::new(),
            model: "default".to_string(),
            timeout_ms: 60_000,
            max_retries: 2,
            retry_backoff_ms: 250,
            max_inflight: 8,
            cache_dir: None,
        }
    }
}

impl ToolConfig {
    /// Point every tool at one fixture directory.
    pub fn all_mock(dir: impl AsRef<Path>) -> Self {
        let spec = format!("mock:{}", dir.as_ref().display());
        Self {
            llm_endpoint: spec.clone(),
            search_endpoint: spec.clone(),
            image_search_endpoint: spec.clone(),
            segment_endpoint: spec,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout_ms == 0 {
            return Err(ToolError::Config("timeout_ms must be > 0".into()));
        }
        if self.max_inflight == 0 {
            return Err(ToolError::Config("max_inflight must be > 0".into()));
        }
        for (name, ep) in [
            ("llm_endpoint", &self.llm_endpoint),
            ("search_endpoint", &self.search_endpoint),
            ("image_search_endpoint", &self.image_search_endpoint),
            ("segment_endpoint", &self.segment_endpoint),
        ] {
            match Endpoint::parse(ep) {
                Endpoint::Unset => return Err(ToolError::Config(format!("{name} is not configured"))),
                Endpoint::Mock(dir) if !dir.is_dir() => {
                    return Err(ToolError::Config(format!(
                        "{name}: fixture directory {} does not exist",
                        dir.display()
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Interaction rounds available to the resolution agent.
    pub max_rounds: u32,
    pub variant: Variant,
    pub weights: FusionWeights,
    pub k_results: usize,
    pub k_ref: usize,
    pub max_boxes: usize,
    pub thresholds: Thresholds,
    pub max_repair_cycles: u32,
    pub max_followups: usize,
    /// One text search per answer option before option resolution.
    pub vqa_search: bool,
    pub workers: usize,
    pub render: RenderSpec,
    /// Keep composed prompt images in traces.
    pub trace_images: bool,
    /// Directory of prompt templates overriding the built-in catalog.
    pub prompt_dir: Option<PathBuf>,
    #[serde(rename = "endpoints")]
    pub tools: ToolConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_rounds: 5,
            variant: Variant::Full,
            weights: FusionWeights::default(),
            k_results: 5,
            k_ref: 2,
            max_boxes: 8,
            thresholds: Thresholds::default(),
            max_repair_cycles: 2,
            max_followups: 2,
            vqa_search: true,
            workers: 4,
            render: RenderSpec::default(),
            trace_images: false,
            prompt_dir: None,
            tools: ToolConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a JSON config file.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ToolError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| ToolError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ToolError::Config(e.to_string()))
    }

    /// Fusion weights with the configured variant applied.
    pub fn effective_weights(&self) -> FusionWeights {
        self.variant.apply(&self.weights)
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.variant = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(ToolError::Config("max_rounds must be >= 1".into()));
        }
        if self.max_boxes == 0 {
            return Err(ToolError::Config("max_boxes must be >= 1".into()));
        }
        if self.workers == 0 {
            return Err(ToolError::Config("workers must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.render.crop_pad_frac) {
            return Err(ToolError::Config("crop_pad_frac must be in [0,1]".into()));
        }
        self.weights.validate()?;
        self.tools.validate()
    }

    /// Summary echoed into evaluation reports.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "variant": self.variant.name(),
            "max_rounds": self.max_rounds,
            "weights": self.effective_weights(),
        })
    }
}

//! Tool gateway, resolution agent, grounding engine and task runners.

pub mod agent;
pub mod config;
pub mod error;
pub mod gateway;
pub mod grounding;
pub mod prompts;
pub mod runners;
pub mod session;
pub mod structured;
pub mod trace;

pub use config::{FusionWeights, RunConfig, Thresholds, ToolConfig, Variant};
pub use error::{Result, ToolError};
pub use gateway::{ChatRequest, FetchedImage, Gateway, PromptImage};
pub use grounding::BindResult;
pub use prompts::PromptCatalog;
pub use runners::{Engine, SampleOutcome};
pub use session::Session;
pub use trace::{Trace, TraceEvent};

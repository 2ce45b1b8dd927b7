use thiserror::Error;

/// Failures at the tool boundary. [`ToolError::code`] gives the stable code
/// used in traces, prediction records and CLI output.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("llm-unreachable: {0}")]
    LlmUnreachable(String),

    #[error("schema-violation({prompt_id}): {detail}")]
    SchemaViolation { prompt_id: String, detail: String },

    #[error("search-unreachable: {0}")]
    SearchUnreachable(String),

    #[error("image-search-unreachable: {0}")]
    ImageSearchUnreachable(String),

    #[error("segmenter-unreachable: {0}")]
    SegmenterUnreachable(String),

    #[error("segmenter-bad-mask: {0}")]
    SegmenterBadMask(String),

    #[error("image-decode-failed: {0}")]
    ImageDecode(String),

    #[error("fetch-failed: {0}")]
    FetchFailed(String),

    #[error("no-candidates")]
    NoCandidates,

    #[error("precondition-failed: {0}")]
    Precondition(String),

    /// A scripted mock ran out of entries or saw an unexpected prompt.
    #[error("mock-script: {0}")]
    MockScript(String),

    #[error("config-error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] searchpix_core::Error),
}

impl ToolError {
    pub fn code(&self) -> &'static str {
        match self {
            ToolError::LlmUnreachable(_) => "llm-unreachable",
            ToolError::SchemaViolation { .. } => "schema-violation",
            ToolError::SearchUnreachable(_) => "search-unreachable",
            ToolError::ImageSearchUnreachable(_) => "image-search-unreachable",
            ToolError::SegmenterUnreachable(_) => "segmenter-unreachable",
            ToolError::SegmenterBadMask(_) => "segmenter-bad-mask",
            ToolError::ImageDecode(_) => "image-decode-failed",
            ToolError::FetchFailed(_) => "fetch-failed",
            ToolError::NoCandidates => "no-candidates",
            ToolError::Precondition(_) => "precondition-failed",
            ToolError::MockScript(_) => "mock-script",
            ToolError::Config(_) => "config-error",
            ToolError::Core(e) => e.code(),
        }
    }

    pub fn is_schema_violation(&self) -> bool {
        matches!(self, ToolError::SchemaViolation { .. })
    }
}

pub type Result<T, E = ToolError> = std::result::Result<T, E>;

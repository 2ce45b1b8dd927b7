use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by core operations. Each variant maps to a stable
/// kebab-case code via [`Error::code`], which is what reports and the CLI print.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate-box: [{0}, {1}, {2}, {3}]")]
    DegenerateBox(f64, f64, f64, f64),

    #[error("shape-mismatch: {left_h}x{left_w} vs {right_h}x{right_w}")]
    ShapeMismatch {
        left_h: u32,
        left_w: u32,
        right_h: u32,
        right_w: u32,
    },

    #[error("rle-length-mismatch: counts sum to {got}, expected {expected}")]
    RleLengthMismatch { got: u64, expected: u64 },

    #[error("invalid-rle: {0}")]
    InvalidRle(String),

    #[error("empty-mask")]
    EmptyMask,

    #[error("malformed-dataset: {0}")]
    MalformedDataset(String),

    #[error("broken-chain({0})")]
    BrokenChain(String),

    #[error("image-decode-failed: {0}")]
    ImageDecode(String),

    #[error("no-candidates")]
    NoCandidates,

    #[error("orphan-prediction({0})")]
    OrphanPrediction(String),

    #[error("malformed-prediction: {0}")]
    MalformedPrediction(String),

    #[error("invalid-hypothesis: {0}")]
    InvalidHypothesis(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateBox(..) => "degenerate-box",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::RleLengthMismatch { .. } => "rle-length-mismatch",
            Error::InvalidRle(_) => "invalid-rle",
            Error::EmptyMask => "empty-mask",
            Error::MalformedDataset(_) => "malformed-dataset",
            Error::BrokenChain(_) => "broken-chain",
            Error::ImageDecode(_) => "image-decode-failed",
            Error::NoCandidates => "no-candidates",
            Error::OrphanPrediction(_) => "orphan-prediction",
            Error::MalformedPrediction(_) => "malformed-prediction",
            Error::InvalidHypothesis(_) => "invalid-hypothesis",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}

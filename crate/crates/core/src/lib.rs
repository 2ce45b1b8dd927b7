//! Core data model and pure computation for search-to-pixel grounding.
//!
//! Everything here is deterministic and free of I/O beyond reading and
//! writing local files: box and mask geometry, the run-length mask codec,
//! benchmark corpus loading and validation, image composition for prompts,
//! and evaluation (IoU, Recall@0.5, gIoU/cIoU, accuracy, failure taxonomy).
//!
//! Per-sample loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise; see [`exec`].

pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geometry;
pub mod mask;
pub mod prediction;
pub mod render;
pub mod types;

mod font;

pub use dataset::{
    expand_samples, load_dataset, parse_dataset, read_dataset, validate_dataset, DatasetBundle,
    DatasetCounts, EvidenceRecord, ImageRecord, ObjectRecord, QaItem, Task, TaskFilter, TaskSample,
    ValidationOptions, Violation,
};
pub use error::{Error, Result};
pub use geometry::{box_iou, BBox};
pub use mask::{mask_bbox, mask_iou, BinaryMask, Rle};
pub use prediction::{Payload, PredictionRecord, ToolCounts};
pub use types::{
    candidate_id, AgentAction, AppearanceProfile, Candidate, CandidateScores, CandidateSource, EntityType,
    EvidenceItem, EvidenceLog, EvidenceSource, ImageRef, SearchResult, TargetHypothesis,
};

//! Temporal action segmentation: label schema and metrics.

pub mod eval;
pub mod schema;

pub use eval::{evaluate, evaluate_videos, f1_at_k, frame_accuracy, EvalConfig, EvalReport};
pub use schema::{
    build_label_schema, coarsen_annotation, segments_from_frames, validate_procedure, ActionLabel, JumpType,
    LabelSchema, LabeledTimeline, Level, Segment, Violation,
};

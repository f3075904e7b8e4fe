//! Reasoning-program data model: operation vocabularies, programs with
//! question/visual/dependency arguments, IoU-based soft supervision
//! targets, the program JSON schema, and GQA-format annotation ingestion.

mod geometry;
mod gqa;
mod program;
mod serial;
mod targets;

pub use geometry::{iou, BBox};
pub use gqa::{
    default_label_map, parse_gqa_json, tokenize_question, GqaError, LabelMap, ParsedGqa,
};
pub use program::{
    validate_program, OperationVocab, Program, ProgramOp, ValidationLimits, Violation, VisualRef,
};
pub use serial::{deserialize, serialize, SerialError};
pub use targets::{binarize_targets, build_soft_visual_targets, build_targets, ArgTargets};

/// Default cap on program length.
pub const DEFAULT_MAX_OPS: usize = 9;

/// Soft-target binarization threshold used by the argument AUC metric.
pub const IOU_BINARIZE_THRESHOLD: f64 = 2.0 / 3.0;

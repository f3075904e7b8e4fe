//! Synthetic GQA-like world: scene graphs, templated questions with
//! ground-truth programs, an oracle executor, detector noise shifts,
//! head/tail splits, and dataset files.

mod dataset;
mod executor;
mod features;
mod noise;
mod reference;
mod rng;
mod templates;
mod world;

pub use dataset::{
    assign_ood_tags, build_manifest, gen_corpus, gen_sample, read_dataset, scene_for,
    write_dataset, DataConfig, DatasetError, Manifest, OodTag, Sample, Split,
};
pub use executor::{execute_program, execute_with_trace, ExecError, Value};
pub use features::{embed_objects, onehot, FeatureMap, VisualMode, ATTR_ONEHOT_DIM};
pub use noise::{apply_presence_shift, oracle_detections, Detection, DetectionSource, NoiseConfig};
pub use reference::execute_reference;
pub use rng::{derive_seed, normal, rng_from};
pub use templates::{realize_question, Realized, N_TEMPLATES};
pub use world::{
    answer_vocab, gen_scene, Relation, SceneGraph, SceneObject, WorldConfig, CLASSES, COLORS,
    RELATION_MARGIN, SIZES,
};

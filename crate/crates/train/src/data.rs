//! Dataset records prepared as model inputs.

use progsup_ir::{build_targets, ArgTargets, BBox, Program};
use progsup_synth::{Manifest, OodTag, Sample, Split};

/// Token/answer lookup built from a dataset manifest.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub words: Vec<String>,
    pub answers: Vec<String>,
}

impl Vocabulary {
    pub fn from_manifest(manifest: &Manifest) -> Self {
        Vocabulary { words: manifest.tokens.clone(), answers: manifest.answers.clone() }
    }

    /// Out-of-vocabulary words map past the end; the encoder folds those
    /// onto its UNK row.
    pub fn token_id(&self, word: &str) -> usize {
        self.words.iter().position(|w| w == word).unwrap_or(self.words.len())
    }

    pub fn answer_id(&self, answer: &str) -> Option<usize> {
        self.answers.iter().position(|a| a == answer)
    }
}

/// One sample in model-ready form.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub sample_id: u64,
    pub template_id: usize,
    pub token_ids: Vec<usize>,
    pub n_tokens: usize,
    pub features: Vec<Vec<f64>>,
    pub boxes: Vec<BBox>,
    pub answer: usize,
    pub answer_is_binary: bool,
    pub program: Program,
    pub gt_ops: Vec<usize>,
    pub targets: ArgTargets,
    pub split: Split,
    pub ood: OodTag,
}

/// Fits a base model configuration to a dataset manifest: feature width,
/// word vocabulary, and answer vocabulary sizes come from the data.
pub fn model_config_for(
    manifest: &Manifest,
    base: &progsup_model::ModelConfig,
) -> progsup_model::ModelConfig {
    let mut cfg = base.clone();
    cfg.feat_dim = manifest.feature_dim;
    cfg.word_vocab = manifest.tokens.len();
    cfg.answer_vocab = manifest.answers.len();
    cfg
}

/// Maps dataset records into prepared samples; argument targets are built
/// against the stored detections.
pub fn prepare_samples(
    samples: &[Sample],
    vocab: &Vocabulary,
    n_maxop: usize,
) -> Vec<PreparedSample> {
    samples
        .iter()
        .map(|s| {
            let token_ids: Vec<usize> = s.tokens.iter().map(|t| vocab.token_id(t)).collect();
            let boxes: Vec<BBox> = s.detections.iter().map(|d| d.bbox).collect();
            let targets = build_targets(&s.program, s.tokens.len(), &boxes, n_maxop);
            let answer = vocab
                .answer_id(&s.answer)
                .unwrap_or_else(|| panic!("answer {:?} missing from the vocabulary", s.answer));
            PreparedSample {
                sample_id: s.sample_id,
                template_id: s.template_id,
                token_ids,
                n_tokens: s.tokens.len(),
                features: s.features.clone(),
                boxes,
                answer,
                answer_is_binary: s.answer == "yes" || s.answer == "no",
                gt_ops: s.program.ops.iter().map(|o| o.op_id).collect(),
                program: s.program.clone(),
                targets,
                split: s.split,
                ood: s.ood,
            }
        })
        .collect()
}

/// Swaps in another sample's program as the supervision target, clipping
/// question-word arguments to this sample's token count and rebuilding the
/// soft visual targets against this sample's detections.
pub fn with_donor_program(receiver: &PreparedSample, donor: &Program, n_maxop: usize) -> PreparedSample {
    let mut program = donor.clone();
    for op in &mut program.ops {
        op.q_args.retain(|&q| q < receiver.n_tokens);
    }
    let targets = build_targets(&program, receiver.n_tokens, &receiver.boxes, n_maxop);
    PreparedSample {
        gt_ops: program.ops.iter().map(|o| o.op_id).collect(),
        targets,
        program,
        ..receiver.clone()
    }
}

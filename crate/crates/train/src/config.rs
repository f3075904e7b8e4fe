//! Training configuration.

use progsup_model::Tap;
use progsup_synth::VisualMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    OraclePretrain,
    Finetune,
    Scratch,
}

/// Which decoder losses are computed at all; weights apply on top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossFlags {
    pub op: bool,
    pub dep: bool,
    pub qarg: bool,
    pub varg: bool,
}

impl LossFlags {
    pub fn all() -> Self {
        LossFlags { op: true, dep: true, qarg: true, varg: true }
    }

    pub fn none() -> Self {
        LossFlags { op: false, dep: false, qarg: false, varg: false }
    }

    pub fn any(&self) -> bool {
        self.op || self.dep || self.qarg || self.varg
    }
}

impl Default for LossFlags {
    fn default() -> Self {
        LossFlags::all()
    }
}

/// Weights of the four program-supervision losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0, delta: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub flags: LossFlags,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub stage: Stage,
    pub visual_mode: VisualMode,
    pub tap: Tap,
    pub grad_clip: Option<f64>,
    /// Replace each sample's program with another sample's, re-drawn per
    /// epoch (sanity-check baseline).
    pub random_programs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            flags: LossFlags::all(),
            lr: 1e-4,
            warmup_fraction: 0.05,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            stage: Stage::Scratch,
            visual_mode: VisualMode::Noisy,
            tap: Tap::Crossmodal,
            grad_clip: None,
            random_programs: false,
        }
    }
}

impl TrainConfig {
    /// Invariants: weights non-negative, positive learning rate, warmup
    /// fraction inside [0, 1).
    pub fn validate(&self) -> Result<(), String> {
        let w = &self.weights;
        if w.alpha < 0.0 || w.beta < 0.0 || w.gamma < 0.0 || w.delta < 0.0 {
            return Err("loss weights must be non-negative".into());
        }
        if self.lr <= 0.0 {
            return Err("learning rate must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err("warmup fraction must lie in [0, 1)".into());
        }
        if self.batch_size == 0 {
            return Err("batch size must be positive".into());
        }
        Ok(())
    }
}

//! Model and decoder hyperparameters.

use serde::{Deserialize, Serialize};

/// Where the program decoder reads its inputs from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tap {
    /// Language/vision embeddings right after the uni-modal stacks.
    Unimodal,
    /// Embeddings after the cross-modal stacks (standard configuration).
    Crossmodal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_hidden: usize,
    pub n_heads: usize,
    pub l_lang: usize,
    pub l_vis: usize,
    pub l_x: usize,
    /// Feed-forward width multiplier inside each block.
    pub ffn_mult: usize,
    pub max_tokens: usize,
    pub max_objects: usize,
    /// Question word vocabulary (CLS/UNK rows are added on top).
    pub word_vocab: usize,
    /// Visual feature width.
    pub feat_dim: usize,
    pub answer_vocab: usize,
    pub tap: Tap,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

impl ModelConfig {
    /// Desk-scale defaults: (64, 4, 4, 2, 2), thin feed-forward.
    pub fn desk() -> Self {
        ModelConfig {
            d_hidden: 64,
            n_heads: 4,
            l_lang: 4,
            l_vis: 2,
            l_x: 2,
            ffn_mult: 2,
            max_tokens: 16,
            max_objects: 16,
            word_vocab: 64,
            feat_dim: 32,
            answer_vocab: 33,
            tap: Tap::Crossmodal,
        }
    }

    /// The full-scale layout: hidden size 128, 4 heads, 9 language, 5
    /// vision and 5 cross-modal layers.
    pub fn paper_scale() -> Self {
        ModelConfig {
            d_hidden: 128,
            n_heads: 4,
            l_lang: 9,
            l_vis: 5,
            l_x: 5,
            ffn_mult: 4,
            max_tokens: 32,
            max_objects: 36,
            word_vocab: 30_000,
            feat_dim: 2048,
            answer_vocab: 1842,
            tap: Tap::Crossmodal,
        }
    }

    pub fn head_dim(&self) -> usize {
        assert_eq!(
            self.d_hidden % self.n_heads,
            0,
            "hidden size {} not divisible by {} heads",
            self.d_hidden,
            self.n_heads
        );
        self.d_hidden / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Maximum number of operations in one program.
    pub n_maxop: usize,
    /// Operation label count, STOP included.
    pub n_op: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { n_maxop: 9, n_op: 24 }
    }
}

//! Batched forward passes: several samples share one tape, with padding
//! to the batch's maximum token/object counts and block-pairwise attention
//! so samples never attend across each other. Produces the same values as
//! the per-sample path; exists because one [B·T × d] product is far
//! cheaper than B small ones.

use progsup_autodiff::{gru_cell, Tensor, Var};
use progsup_ir::BBox;

use crate::config::Tap;
use crate::decoder::ProgramDecoder;
use crate::encoder::{Encoder, CLS_ROW, UNK_ROW, WORD_OFFSET};
use crate::params::Bound;

/// Additive score bias excluding a key from attention.
const MASKED: f64 = -1e30;

/// One sample's raw inputs.
pub struct SampleInput<'a> {
    pub token_ids: &'a [usize],
    pub features: &'a [Vec<f64>],
    pub boxes: &'a [BBox],
}

/// Row layout of a padded batch.
#[derive(Debug, Clone)]
pub struct BatchLayout {
    pub batch: usize,
    /// Tokens per sample including the CLS position.
    pub t_stride: usize,
    pub o_stride: usize,
    pub n_tokens: Vec<usize>,
    pub n_objects: Vec<usize>,
}

impl BatchLayout {
    /// Row of token `j` (0-based, CLS excluded) of sample `i` in the
    /// stacked language stream.
    pub fn token_row(&self, i: usize, j: usize) -> usize {
        i * self.t_stride + 1 + j
    }

    pub fn object_row(&self, i: usize, j: usize) -> usize {
        i * self.o_stride + j
    }
}

pub struct BatchedEncoderOutput {
    pub layout: BatchLayout,
    pub q_out: Var,
    pub v_out: Var,
    /// `[batch × d]` final CLS embeddings.
    pub cls: Var,
    pub tap_q: Var,
    pub tap_v: Var,
    pub tap_cls: Var,
}

fn bias_matrix(b: &mut Bound, rows_per: usize, cols_per: usize, layout: &BatchLayout, keys_are_tokens: bool) -> Var {
    let batch = layout.batch;
    let mut data = vec![0.0; batch * rows_per * cols_per];
    for i in 0..batch {
        let valid = if keys_are_tokens { layout.n_tokens[i] + 1 } else { layout.n_objects[i] };
        for r in 0..rows_per {
            for c in valid..cols_per {
                data[(i * rows_per + r) * cols_per + c] = MASKED;
            }
        }
    }
    b.tape.constant(Tensor::new(vec![batch * rows_per, cols_per], data))
}

impl Encoder {
    /// Multi-head attention over stacked blocks; `bias` carries the
    /// per-sample key masking.
    fn attention_batched(
        &self,
        b: &mut Bound,
        attn: &crate::encoder::Attention,
        queries: Var,
        keys: Var,
        blocks: usize,
        bias: Var,
    ) -> Var {
        let d = self.config.d_hidden;
        let heads = self.config.n_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = attn.wq.apply(b, queries);
        let k = attn.wk.apply(b, keys);
        let v = attn.wv.apply(b, keys);
        let mut ctx = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = b.tape.slice_cols(q, h * dh, dh);
            let kh = b.tape.slice_cols(k, h * dh, dh);
            let vh = b.tape.slice_cols(v, h * dh, dh);
            let scores = b.tape.matmul_batched_nt(qh, kh, blocks);
            let scores = b.tape.affine(scores, scale, 0.0);
            let scores = b.tape.add(scores, bias);
            let attn_w = b.tape.softmax_rows(scores, None);
            ctx.push(b.tape.matmul_batched(attn_w, vh, blocks));
        }
        let cat = b.tape.concat_cols(&ctx);
        attn.wo.apply(b, cat)
    }

    fn self_block_batched(
        &self,
        b: &mut Bound,
        blk: &crate::encoder::SelfBlock,
        x: Var,
        blocks: usize,
        bias: Var,
    ) -> Var {
        let a = self.attention_batched(b, &blk.attn, x, x, blocks, bias);
        let x1 = b.tape.add(x, a);
        let x1 = blk.ln_attn.apply(b, x1);
        let f = blk.ffn.apply(b, x1);
        let x2 = b.tape.add(x1, f);
        blk.ln_ffn.apply(b, x2)
    }

    /// Stacked question embeddings `[batch·(T_max+1) × d]`; pad positions
    /// hold UNK rows and are masked out of attention by the bias matrices.
    pub fn embed_question_batch(&self, b: &mut Bound, inputs: &[SampleInput]) -> (Var, usize) {
        let t_max = inputs.iter().map(|s| s.token_ids.len()).max().unwrap_or(0);
        assert!(t_max <= self.config.max_tokens, "{t_max} tokens exceed the configured maximum");
        let t_stride = t_max + 1;
        let mut word_rows = Vec::with_capacity(inputs.len() * t_stride);
        let mut pos_rows = Vec::with_capacity(inputs.len() * t_stride);
        for s in inputs {
            word_rows.push(CLS_ROW);
            for &t in s.token_ids {
                word_rows.push(if t < self.config.word_vocab { WORD_OFFSET + t } else { UNK_ROW });
            }
            word_rows.extend(std::iter::repeat(UNK_ROW).take(t_stride - 1 - s.token_ids.len()));
            pos_rows.extend(0..t_stride);
        }
        let words = b.tape.gather_rows(b.var(self.word_emb), &word_rows);
        let pos = b.tape.gather_rows(b.var(self.pos_emb), &pos_rows);
        let sum = b.tape.add(words, pos);
        (self.emb_ln.apply(b, sum), t_stride)
    }

    /// Stacked object embeddings `[batch·O_max × d]` with zero-padded rows.
    pub fn embed_objects_batch(&self, b: &mut Bound, inputs: &[SampleInput]) -> (Var, usize) {
        let o_max = inputs.iter().map(|s| s.features.len()).max().unwrap_or(1).max(1);
        let fd = self.config.feat_dim;
        let mut feat_data = Vec::with_capacity(inputs.len() * o_max * fd);
        let mut box_data = Vec::with_capacity(inputs.len() * o_max * 7);
        for s in inputs {
            assert_eq!(s.features.len(), s.boxes.len());
            for f in s.features {
                assert_eq!(f.len(), fd, "feature width mismatch");
                feat_data.extend_from_slice(f);
            }
            for bx in s.boxes {
                box_data.extend(Encoder::box_row(bx));
            }
            for _ in s.features.len()..o_max {
                feat_data.extend(std::iter::repeat(0.0).take(fd));
                box_data.extend(std::iter::repeat(0.0).take(7));
            }
        }
        let n = inputs.len() * o_max;
        let feats = b.tape.constant(Tensor::new(vec![n, fd], feat_data));
        let boxes = b.tape.constant(Tensor::new(vec![n, 7], box_data));
        let fp = self.feat_proj.apply(b, feats);
        let bp = self.box_proj.apply(b, boxes);
        let sum = b.tape.add(fp, bp);
        let mean = b.tape.affine(sum, 0.5, 0.0);
        (self.obj_ln.apply(b, mean), o_max)
    }

    /// Batched version of `encode`; functionally identical per sample.
    pub fn encode_batch(&self, b: &mut Bound, inputs: &[SampleInput]) -> BatchedEncoderOutput {
        let batch = inputs.len();
        assert!(batch > 0, "empty batch");
        let (mut q, t_stride) = self.embed_question_batch(b, inputs);
        let (mut v, o_stride) = self.embed_objects_batch(b, inputs);
        let layout = BatchLayout {
            batch,
            t_stride,
            o_stride,
            n_tokens: inputs.iter().map(|s| s.token_ids.len()).collect(),
            n_objects: inputs.iter().map(|s| s.features.len()).collect(),
        };
        for s in inputs {
            assert!(!s.features.is_empty(), "samples need at least one object row");
        }
        let qq_bias = bias_matrix(b, t_stride, t_stride, &layout, true);
        let vv_bias = bias_matrix(b, o_stride, o_stride, &layout, false);
        let qv_bias = bias_matrix(b, t_stride, o_stride, &layout, false);
        let vq_bias = bias_matrix(b, o_stride, t_stride, &layout, true);

        for blk in &self.lang_blocks {
            q = self.self_block_batched(b, blk, q, batch, qq_bias);
        }
        for blk in &self.vis_blocks {
            v = self.self_block_batched(b, blk, v, batch, vv_bias);
        }
        let (tap_uni_q, tap_uni_v) = (q, v);
        for blk in &self.cross_blocks {
            let qc = self.attention_batched(b, &blk.lang_cross, q, v, batch, qv_bias);
            let qc = {
                let s = b.tape.add(q, qc);
                blk.lang_ln_cross.apply(b, s)
            };
            let vc = self.attention_batched(b, &blk.vis_cross, v, q, batch, vq_bias);
            let vc = {
                let s = b.tape.add(v, vc);
                blk.vis_ln_cross.apply(b, s)
            };
            q = self.self_block_batched(b, &blk.lang_self, qc, batch, qq_bias);
            v = self.self_block_batched(b, &blk.vis_self, vc, batch, vv_bias);
        }
        let cls_rows: Vec<usize> = (0..batch).map(|i| i * t_stride).collect();
        let cls = b.tape.gather_rows(q, &cls_rows);
        let (tap_q, tap_v) = match self.config.tap {
            Tap::Unimodal => (tap_uni_q, tap_uni_v),
            Tap::Crossmodal => (q, v),
        };
        let tap_cls = match self.config.tap {
            Tap::Unimodal => b.tape.gather_rows(tap_uni_q, &cls_rows),
            Tap::Crossmodal => cls,
        };
        BatchedEncoderOutput { layout, q_out: q, v_out: v, cls, tap_q, tap_v, tap_cls }
    }
}

/// Step-major batched teacher forcing output.
pub struct BatchedDecode {
    /// `[(L_max+1)·batch × n_op]`; the row for step t of sample i is
    /// `t·batch + i`.
    pub op_logits: Var,
    /// `[Σ L_i × d]` hidden rows in sample-major order; `None` when every
    /// program is empty.
    pub hidden: Option<Var>,
    /// Start row of each sample's hidden block.
    pub offsets: Vec<usize>,
    pub l_max: usize,
}

impl ProgramDecoder {
    /// Teacher-forced coarse pass over a whole batch; programs shorter
    /// than the longest run padded steps whose logits carry zero loss
    /// weight downstream.
    pub fn decode_coarse_teacher_forced_batch(
        &self,
        b: &mut Bound,
        cls: Var,
        gt: &[&[usize]],
    ) -> BatchedDecode {
        let batch = gt.len();
        assert_eq!(b.tape.value(cls).rows(), batch, "one CLS row per sample");
        let l_max = gt.iter().map(|g| g.len()).max().unwrap_or(0);
        let w = self.coarse.bind(b);
        let start = self.start_row();
        let mut h = cls;
        let mut logit_steps = Vec::with_capacity(l_max + 1);
        let mut hidden_steps = Vec::with_capacity(l_max);
        for t in 0..=l_max {
            let rows: Vec<usize> = gt
                .iter()
                .map(|g| if t == 0 || t > g.len() { start } else { g[t - 1] })
                .collect();
            let x = b.tape.gather_rows(b.var(self.op_embed), &rows);
            h = gru_cell(b.tape, x, h, &w);
            logit_steps.push(self.op_head(b, h));
            if t < l_max {
                hidden_steps.push(h);
            }
        }
        let op_logits = b.tape.concat_rows(&logit_steps);
        let mut offsets = Vec::with_capacity(batch);
        let mut cursor = 0usize;
        let mut rows = Vec::new();
        for (i, g) in gt.iter().enumerate() {
            offsets.push(cursor);
            for t in 0..g.len() {
                rows.push(t * batch + i);
            }
            cursor += g.len();
        }
        let hidden = if rows.is_empty() {
            None
        } else {
            let all = b.tape.concat_rows(&hidden_steps);
            Some(b.tape.gather_rows(all, &rows))
        };
        BatchedDecode { op_logits, hidden, offsets, l_max }
    }

    /// Question-token affinity MLP over pre-gathered (hidden, item) pairs.
    pub fn question_affinity_mlp(&self, b: &mut Bound, cat: Var) -> Var {
        let a = self.q_aff1.apply(b, cat);
        let a = b.tape.gelu(a);
        self.q_aff2.apply(b, a)
    }

    /// Visual-object affinity MLP over pre-gathered pairs.
    pub fn visual_affinity_mlp(&self, b: &mut Bound, cat: Var) -> Var {
        let a = self.v_aff1.apply(b, cat);
        let a = b.tape.gelu(a);
        self.v_aff2.apply(b, a)
    }
}

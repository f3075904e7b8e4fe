//! Two-stream encoder: language self-attention stack, vision
//! self-attention stack, then bidirectional cross-modal blocks
//! (cross-attention, per-stream self-attention, per-stream feed-forward,
//! residual + layer norm around each sub-block). The first language
//! position is a learned CLS token; objects carry position only through
//! their box features, so the visual stream is permutation-equivariant.

use progsup_autodiff::{Tensor, Var};
use progsup_ir::BBox;

use crate::config::{ModelConfig, Tap};
use crate::params::{Bound, Init, ParamId, ParamSet};

/// Reserved word ids: CLS sits at row 0, unknown words map to row 1,
/// vocabulary words start at row 2.
pub const CLS_ROW: usize = 0;
pub const UNK_ROW: usize = 1;
pub const WORD_OFFSET: usize = 2;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub(crate) fn new(params: &mut ParamSet, init: &mut Init, name: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            w: params.add(format!("{name}.w"), init.proj(d_in, d_out)),
            b: params.add(format!("{name}.b"), init.zeros(1, d_out)),
        }
    }

    pub fn apply(&self, b: &mut Bound, x: Var) -> Var {
        let xw = b.tape.matmul(x, b.var(self.w));
        b.tape.add_row_broadcast(xw, b.var(self.b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub g: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub(crate) fn new(params: &mut ParamSet, init: &mut Init, name: &str, d: usize) -> Self {
        LayerNorm {
            g: params.add(format!("{name}.g"), init.ones(d)),
            b: params.add(format!("{name}.b"), init.zeros(1, d)),
        }
    }

    pub fn apply(&self, b: &mut Bound, x: Var) -> Var {
        b.tape.layer_norm(x, b.var(self.g), b.var(self.b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub(crate) wq: Linear,
    pub(crate) wk: Linear,
    pub(crate) wv: Linear,
    pub(crate) wo: Linear,
}

impl Attention {
    fn new(params: &mut ParamSet, init: &mut Init, name: &str, d: usize) -> Self {
        Attention {
            wq: Linear::new(params, init, &format!("{name}.q"), d, d),
            wk: Linear::new(params, init, &format!("{name}.k"), d, d),
            wv: Linear::new(params, init, &format!("{name}.v"), d, d),
            wo: Linear::new(params, init, &format!("{name}.o"), d, d),
        }
    }

    /// Multi-head attention of `queries` over `keys`; `key_mask` marks the
    /// key positions allowed to receive weight.
    fn apply(
        &self,
        b: &mut Bound,
        queries: Var,
        keys: Var,
        n_heads: usize,
        key_mask: Option<&[bool]>,
        probes: &mut Option<&mut Vec<Tensor>>,
    ) -> Var {
        let d = b.tape.value(queries).cols();
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.wq.apply(b, queries);
        let k = self.wk.apply(b, keys);
        let v = self.wv.apply(b, keys);
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let qh = b.tape.slice_cols(q, h * dh, dh);
            let kh = b.tape.slice_cols(k, h * dh, dh);
            let vh = b.tape.slice_cols(v, h * dh, dh);
            let kt = b.tape.transpose(kh);
            let scores = b.tape.matmul(qh, kt);
            let scores = b.tape.affine(scores, scale, 0.0);
            let attn = b.tape.softmax_rows(scores, key_mask);
            if let Some(p) = probes.as_deref_mut() {
                p.push(b.tape.value(attn).clone());
            }
            heads.push(b.tape.matmul(attn, vh));
        }
        let ctx = b.tape.concat_cols(&heads);
        self.wo.apply(b, ctx)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub(crate) lin1: Linear,
    pub(crate) lin2: Linear,
}

impl FeedForward {
    pub(crate) fn new(params: &mut ParamSet, init: &mut Init, name: &str, d: usize, mult: usize) -> Self {
        FeedForward {
            lin1: Linear::new(params, init, &format!("{name}.1"), d, d * mult),
            lin2: Linear::new(params, init, &format!("{name}.2"), d * mult, d),
        }
    }

    pub(crate) fn apply(&self, b: &mut Bound, x: Var) -> Var {
        let h = self.lin1.apply(b, x);
        let h = b.tape.gelu(h);
        self.lin2.apply(b, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelfBlock {
    pub(crate) attn: Attention,
    pub(crate) ln_attn: LayerNorm,
    pub(crate) ffn: FeedForward,
    pub(crate) ln_ffn: LayerNorm,
}

impl SelfBlock {
    fn new(params: &mut ParamSet, init: &mut Init, name: &str, d: usize, mult: usize) -> Self {
        SelfBlock {
            attn: Attention::new(params, init, &format!("{name}.attn"), d),
            ln_attn: LayerNorm::new(params, init, &format!("{name}.ln_attn"), d),
            ffn: FeedForward::new(params, init, &format!("{name}.ffn"), d, mult),
            ln_ffn: LayerNorm::new(params, init, &format!("{name}.ln_ffn"), d),
        }
    }

    fn apply(
        &self,
        b: &mut Bound,
        x: Var,
        n_heads: usize,
        mask: Option<&[bool]>,
        probes: &mut Option<&mut Vec<Tensor>>,
    ) -> Var {
        let a = self.attn.apply(b, x, x, n_heads, mask, probes);
        let x1 = b.tape.add(x, a);
        let x1 = self.ln_attn.apply(b, x1);
        let f = self.ffn.apply(b, x1);
        let x2 = b.tape.add(x1, f);
        self.ln_ffn.apply(b, x2)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CrossBlock {
    pub(crate) lang_cross: Attention,
    pub(crate) lang_ln_cross: LayerNorm,
    pub(crate) vis_cross: Attention,
    pub(crate) vis_ln_cross: LayerNorm,
    pub(crate) lang_self: SelfBlock,
    pub(crate) vis_self: SelfBlock,
}

impl CrossBlock {
    fn new(params: &mut ParamSet, init: &mut Init, name: &str, d: usize, mult: usize) -> Self {
        CrossBlock {
            lang_cross: Attention::new(params, init, &format!("{name}.lang_cross"), d),
            lang_ln_cross: LayerNorm::new(params, init, &format!("{name}.lang_ln_cross"), d),
            vis_cross: Attention::new(params, init, &format!("{name}.vis_cross"), d),
            vis_ln_cross: LayerNorm::new(params, init, &format!("{name}.vis_ln_cross"), d),
            lang_self: SelfBlock::new(params, init, &format!("{name}.lang_self"), d, mult),
            vis_self: SelfBlock::new(params, init, &format!("{name}.vis_self"), d, mult),
        }
    }
}

/// Encoder outputs plus the tap embeddings the program decoder reads.
pub struct EncoderOutput {
    pub q_out: Var,
    pub v_out: Var,
    /// Final CLS embedding (first language row); the answer head input.
    pub cls: Var,
    pub tap_q: Var,
    pub tap_v: Var,
    /// CLS row captured at the tap stage.
    pub tap_cls: Var,
}

pub struct Encoder {
    pub config: ModelConfig,
    pub(crate) word_emb: ParamId,
    pub(crate) pos_emb: ParamId,
    pub(crate) emb_ln: LayerNorm,
    pub(crate) feat_proj: Linear,
    pub(crate) box_proj: Linear,
    pub(crate) obj_ln: LayerNorm,
    pub(crate) lang_blocks: Vec<SelfBlock>,
    pub(crate) vis_blocks: Vec<SelfBlock>,
    pub(crate) cross_blocks: Vec<CrossBlock>,
    pub(crate) ans_hidden: Linear,
    pub(crate) ans_ln: LayerNorm,
    pub(crate) ans_out: Linear,
}

impl Encoder {
    pub fn new(config: ModelConfig, params: &mut ParamSet, init: &mut Init) -> Self {
        let d = config.d_hidden;
        config.head_dim(); // validates divisibility
        let word_emb =
            params.add("enc.word_emb", init.weight(WORD_OFFSET + config.word_vocab, d));
        let pos_emb = params.add("enc.pos_emb", init.weight(config.max_tokens + 1, d));
        let emb_ln = LayerNorm::new(params, init, "enc.emb_ln", d);
        let feat_proj = Linear::new(params, init, "enc.feat_proj", config.feat_dim, d);
        let box_proj = Linear::new(params, init, "enc.box_proj", 7, d);
        let obj_ln = LayerNorm::new(params, init, "enc.obj_ln", d);
        let lang_blocks = (0..config.l_lang)
            .map(|i| SelfBlock::new(params, init, &format!("enc.lang.{i}"), d, config.ffn_mult))
            .collect();
        let vis_blocks = (0..config.l_vis)
            .map(|i| SelfBlock::new(params, init, &format!("enc.vis.{i}"), d, config.ffn_mult))
            .collect();
        let cross_blocks = (0..config.l_x)
            .map(|i| CrossBlock::new(params, init, &format!("enc.cross.{i}"), d, config.ffn_mult))
            .collect();
        let ans_hidden = Linear::new(params, init, "enc.ans_hidden", d, d);
        let ans_ln = LayerNorm::new(params, init, "enc.ans_ln", d);
        let ans_out = Linear::new(params, init, "enc.ans_out", d, config.answer_vocab);
        Encoder {
            config,
            word_emb,
            pos_emb,
            emb_ln,
            feat_proj,
            box_proj,
            obj_ln,
            lang_blocks,
            vis_blocks,
            cross_blocks,
            ans_hidden,
            ans_ln,
            ans_out,
        }
    }

    /// Token ids are raw vocabulary ids (without the CLS/UNK offset); out
    /// of range ids map to the UNK row. A CLS position is prepended, so
    /// the output has `tokens.len() + 1` rows.
    pub fn embed_question(&self, b: &mut Bound, token_ids: &[usize]) -> Var {
        assert!(
            token_ids.len() <= self.config.max_tokens,
            "{} tokens exceed max_tokens {}",
            token_ids.len(),
            self.config.max_tokens
        );
        let mut rows = Vec::with_capacity(token_ids.len() + 1);
        rows.push(CLS_ROW);
        for &t in token_ids {
            rows.push(if t < self.config.word_vocab { WORD_OFFSET + t } else { UNK_ROW });
        }
        let words = b.tape.gather_rows(b.var(self.word_emb), &rows);
        let positions: Vec<usize> = (0..rows.len()).collect();
        let pos = b.tape.gather_rows(b.var(self.pos_emb), &positions);
        let sum = b.tape.add(words, pos);
        self.emb_ln.apply(b, sum)
    }

    /// Seven-feature box encoding: corners, width, height, area.
    pub fn box_row(bbox: &BBox) -> Vec<f64> {
        vec![
            bbox.x1,
            bbox.y1,
            bbox.x2,
            bbox.y2,
            bbox.width(),
            bbox.height(),
            bbox.area(),
        ]
    }

    /// Object embeddings: mean of the projected features and the projected
    /// box row, then layer norm.
    pub fn embed_objects(&self, b: &mut Bound, features: &[Vec<f64>], boxes: &[BBox]) -> Var {
        assert_eq!(features.len(), boxes.len(), "one box per feature row");
        assert!(!features.is_empty(), "encoder needs at least one object");
        let n = features.len();
        let feat_data: Vec<f64> = features.iter().flatten().copied().collect();
        let feats = b
            .tape
            .constant(Tensor::new(vec![n, self.config.feat_dim], feat_data));
        let box_data: Vec<f64> = boxes.iter().flat_map(Encoder::box_row).collect();
        let boxes_t = b.tape.constant(Tensor::new(vec![n, 7], box_data));
        let fp = self.feat_proj.apply(b, feats);
        let bp = self.box_proj.apply(b, boxes_t);
        let sum = b.tape.add(fp, bp);
        let mean = b.tape.affine(sum, 0.5, 0.0);
        self.obj_ln.apply(b, mean)
    }

    /// Runs the uni-modal stacks then the cross-modal stacks. Masks mark
    /// real (unpadded) positions; `q_mask` covers the CLS position too.
    pub fn encode(
        &self,
        b: &mut Bound,
        q_emb: Var,
        v_emb: Var,
        q_mask: Option<&[bool]>,
        v_mask: Option<&[bool]>,
        mut probes: Option<&mut Vec<Tensor>>,
    ) -> EncoderOutput {
        if let Some(m) = q_mask {
            assert_eq!(m.len(), b.tape.value(q_emb).rows(), "question mask length");
        }
        if let Some(m) = v_mask {
            assert_eq!(m.len(), b.tape.value(v_emb).rows(), "object mask length");
        }
        let heads = self.config.n_heads;
        let mut q = q_emb;
        for blk in &self.lang_blocks {
            q = blk.apply(b, q, heads, q_mask, &mut probes);
        }
        let mut v = v_emb;
        for blk in &self.vis_blocks {
            v = blk.apply(b, v, heads, v_mask, &mut probes);
        }
        let (tap_uni_q, tap_uni_v) = (q, v);
        for blk in &self.cross_blocks {
            let qc = blk.lang_cross.apply(b, q, v, heads, v_mask, &mut probes);
            let qc = {
                let s = b.tape.add(q, qc);
                blk.lang_ln_cross.apply(b, s)
            };
            let vc = blk.vis_cross.apply(b, v, q, heads, q_mask, &mut probes);
            let vc = {
                let s = b.tape.add(v, vc);
                blk.vis_ln_cross.apply(b, s)
            };
            q = blk.lang_self.apply(b, qc, heads, q_mask, &mut probes);
            v = blk.vis_self.apply(b, vc, heads, v_mask, &mut probes);
        }
        let cls = b.tape.gather_rows(q, &[0]);
        let (tap_q, tap_v) = match self.config.tap {
            Tap::Unimodal => (tap_uni_q, tap_uni_v),
            Tap::Crossmodal => (q, v),
        };
        let tap_cls = match self.config.tap {
            Tap::Unimodal => b.tape.gather_rows(tap_uni_q, &[0]),
            Tap::Crossmodal => cls,
        };
        EncoderOutput { q_out: q, v_out: v, cls, tap_q, tap_v, tap_cls }
    }

    /// Answer head: linear → GeLU → layer norm → linear.
    pub fn answer_logits(&self, b: &mut Bound, cls: Var) -> Var {
        let h = self.ans_hidden.apply(b, cls);
        let h = b.tape.gelu(h);
        let h = self.ans_ln.apply(b, h);
        self.ans_out.apply(b, h)
    }
}

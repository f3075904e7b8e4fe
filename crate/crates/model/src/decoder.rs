//! Coarse-to-fine program decoder: an operation GRU seeded from the CLS
//! embedding, affinity heads scoring question tokens and visual objects
//! against each operation's hidden state, and a dependency GRU projecting
//! to earlier-operation logits.

use progsup_autodiff::{gru_cell, GruWeights, Tensor, Var};
use progsup_ir::{BBox, Program, ProgramOp, VisualRef};

use crate::config::DecoderConfig;
use crate::encoder::Linear;
use crate::params::{Bound, Init, ParamId, ParamSet};

#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    w_xr: ParamId,
    w_hr: ParamId,
    b_r: ParamId,
    w_xz: ParamId,
    w_hz: ParamId,
    b_z: ParamId,
    w_xh: ParamId,
    w_hh: ParamId,
    b_h: ParamId,
}

impl GruParams {
    fn new(params: &mut ParamSet, init: &mut Init, name: &str, d_in: usize, d_h: usize) -> Self {
        GruParams {
            w_xr: params.add(format!("{name}.w_xr"), init.proj(d_in, d_h)),
            w_hr: params.add(format!("{name}.w_hr"), init.proj(d_h, d_h)),
            b_r: params.add(format!("{name}.b_r"), init.zeros(1, d_h)),
            w_xz: params.add(format!("{name}.w_xz"), init.proj(d_in, d_h)),
            w_hz: params.add(format!("{name}.w_hz"), init.proj(d_h, d_h)),
            b_z: params.add(format!("{name}.b_z"), init.zeros(1, d_h)),
            w_xh: params.add(format!("{name}.w_xh"), init.proj(d_in, d_h)),
            w_hh: params.add(format!("{name}.w_hh"), init.proj(d_h, d_h)),
            b_h: params.add(format!("{name}.b_h"), init.zeros(1, d_h)),
        }
    }

    pub(crate) fn bind(&self, b: &Bound) -> GruWeights {
        GruWeights {
            w_xr: b.var(self.w_xr),
            w_hr: b.var(self.w_hr),
            b_r: b.var(self.b_r),
            w_xz: b.var(self.w_xz),
            w_hz: b.var(self.w_hz),
            b_z: b.var(self.b_z),
            w_xh: b.var(self.w_xh),
            w_hh: b.var(self.w_hh),
            b_h: b.var(self.b_h),
        }
    }
}

/// Teacher-forced decoder activations for one sample.
pub struct ProgramPrediction {
    /// `[n_steps × n_op]`, the terminal STOP step included.
    pub op_logits: Var,
    /// `[n_ops × d]`, one row per real operation; absent for empty programs.
    pub hidden: Option<Var>,
    pub a_q_scores: Option<Var>,
    pub a_v_scores: Option<Var>,
    pub a_d_scores: Option<Var>,
}

/// The four supervision losses (scalars on the tape).
pub struct DecoderLosses {
    pub l_op: Var,
    pub l_qarg: Var,
    pub l_varg: Var,
    pub l_dep: Var,
}

pub struct ProgramDecoder {
    pub config: DecoderConfig,
    pub(crate) d: usize,
    pub(crate) op_embed: ParamId,
    pub(crate) coarse: GruParams,
    pub(crate) op_head1: Linear,
    pub(crate) op_head2: Linear,
    pub(crate) q_aff1: Linear,
    pub(crate) q_aff2: Linear,
    pub(crate) v_aff1: Linear,
    pub(crate) v_aff2: Linear,
    pub(crate) dep_gru: GruParams,
    pub(crate) dep_proj: Linear,
    /// STOP's index in the operation vocabulary.
    pub stop_index: usize,
}

impl ProgramDecoder {
    pub fn new(
        config: DecoderConfig,
        d: usize,
        stop_index: usize,
        params: &mut ParamSet,
        init: &mut Init,
    ) -> Self {
        assert!(config.n_maxop >= 1);
        assert!(stop_index < config.n_op);
        let half = d / 2;
        // one learned row per operation plus a start-of-sequence row
        let op_embed = params.add("dec.op_embed", init.table(config.n_op + 1, d));
        let coarse = GruParams::new(params, init, "dec.coarse", d, d);
        let op_head1 = Linear::new(params, init, "dec.op_head.1", d, half);
        let op_head2 = Linear::new(params, init, "dec.op_head.2", half, config.n_op);
        let q_aff1 = Linear::new(params, init, "dec.q_aff.1", 2 * d, half);
        let q_aff2 = Linear::new(params, init, "dec.q_aff.2", half, 1);
        let v_aff1 = Linear::new(params, init, "dec.v_aff.1", 2 * d, half);
        let v_aff2 = Linear::new(params, init, "dec.v_aff.2", half, 1);
        let dep_gru = GruParams::new(params, init, "dec.dep", d, d);
        let dep_proj = Linear::new(params, init, "dec.dep_proj", d, config.n_maxop);
        ProgramDecoder {
            config,
            d,
            op_embed,
            coarse,
            op_head1,
            op_head2,
            q_aff1,
            q_aff2,
            v_aff1,
            v_aff2,
            dep_gru,
            dep_proj,
            stop_index,
        }
    }

    pub(crate) fn start_row(&self) -> usize {
        self.config.n_op
    }

    pub(crate) fn op_head(&self, b: &mut Bound, h: Var) -> Var {
        let x = self.op_head1.apply(b, h);
        let x = b.tape.gelu(x);
        self.op_head2.apply(b, x)
    }

    /// Teacher-forced coarse pass: feeds the ground-truth operation
    /// embeddings and runs `len(gt)+1` steps, the final step supervised as
    /// STOP. Returns per-step logits and the hidden rows aligned to the
    /// real operations.
    pub fn decode_coarse_teacher_forced(
        &self,
        b: &mut Bound,
        cls: Var,
        gt_ops: &[usize],
    ) -> (Var, Option<Var>) {
        let w = self.coarse.bind(b);
        let mut h = cls;
        let mut logit_rows = Vec::with_capacity(gt_ops.len() + 1);
        let mut hidden_rows = Vec::with_capacity(gt_ops.len());
        for t in 0..=gt_ops.len() {
            let row = if t == 0 { self.start_row() } else { gt_ops[t - 1] };
            let x = b.tape.gather_rows(b.var(self.op_embed), &[row]);
            h = gru_cell(b.tape, x, h, &w);
            logit_rows.push(self.op_head(b, h));
            if t < gt_ops.len() {
                hidden_rows.push(h);
            }
        }
        let logits = b.tape.concat_rows(&logit_rows);
        let hidden =
            if hidden_rows.is_empty() { None } else { Some(b.tape.concat_rows(&hidden_rows)) };
        (logits, hidden)
    }

    /// Free-running greedy decode; stops at STOP or after `n_maxop` steps.
    pub fn decode_coarse_free(&self, b: &mut Bound, cls: Var) -> (Vec<usize>, Option<Var>) {
        let w = self.coarse.bind(b);
        let mut h = cls;
        let mut ops = Vec::new();
        let mut hidden_rows = Vec::new();
        let mut prev = self.start_row();
        for _ in 0..self.config.n_maxop {
            let x = b.tape.gather_rows(b.var(self.op_embed), &[prev]);
            h = gru_cell(b.tape, x, h, &w);
            let logits = self.op_head(b, h);
            let row = b.tape.value(logits).data();
            let op = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if op == self.stop_index {
                break;
            }
            ops.push(op);
            hidden_rows.push(h);
            prev = op;
        }
        let hidden =
            if hidden_rows.is_empty() { None } else { Some(b.tape.concat_rows(&hidden_rows)) };
        (ops, hidden)
    }

    /// All (operation, item) pairs scored in one batched MLP pass over a
    /// `[n_ops·n_items × 2d]` concatenation.
    fn affinity(
        &self,
        b: &mut Bound,
        hidden: Var,
        items: Var,
        lin1: Linear,
        lin2: Linear,
    ) -> Var {
        let n_ops = b.tape.value(hidden).rows();
        let n_items = b.tape.value(items).rows();
        let op_idx: Vec<usize> = (0..n_ops).flat_map(|i| std::iter::repeat(i).take(n_items)).collect();
        let item_idx: Vec<usize> = (0..n_ops).flat_map(|_| 0..n_items).collect();
        let h_rep = b.tape.gather_rows(hidden, &op_idx);
        let it_rep = b.tape.gather_rows(items, &item_idx);
        let cat = b.tape.concat_cols(&[h_rep, it_rep]);
        let a = lin1.apply(b, cat);
        let a = b.tape.gelu(a);
        let s = lin2.apply(b, a); // [n_ops·n_items × 1]
        b.tape.reshape(s, n_ops, n_items)
    }

    /// Affinity logits between operation hiddens and question tokens.
    pub fn score_question_args(&self, b: &mut Bound, hidden: Var, q_tokens: Var) -> Var {
        self.affinity(b, hidden, q_tokens, self.q_aff1, self.q_aff2)
    }

    /// Affinity logits between operation hiddens and visual objects.
    pub fn score_visual_args(&self, b: &mut Bound, hidden: Var, v_objs: Var) -> Var {
        self.affinity(b, hidden, v_objs, self.v_aff1, self.v_aff2)
    }

    /// Dependency logits: a second GRU advanced one step from each
    /// operation's hidden state with a zero input, then projected to
    /// `n_maxop` multi-label logits.
    pub fn decode_dep_args(&self, b: &mut Bound, hidden: Var) -> Var {
        let n_ops = b.tape.value(hidden).rows();
        let w = self.dep_gru.bind(b);
        let zero_in = b.tape.constant(Tensor::zeros(n_ops, self.d));
        let h2 = gru_cell(b.tape, zero_in, hidden, &w);
        self.dep_proj.apply(b, h2)
    }

    /// Full teacher-forced pass with every argument head.
    pub fn forward_teacher_forced(
        &self,
        b: &mut Bound,
        cls: Var,
        q_tokens: Var,
        v_objs: Var,
        gt_ops: &[usize],
    ) -> ProgramPrediction {
        let (op_logits, hidden) = self.decode_coarse_teacher_forced(b, cls, gt_ops);
        match hidden {
            None => ProgramPrediction {
                op_logits,
                hidden: None,
                a_q_scores: None,
                a_v_scores: None,
                a_d_scores: None,
            },
            Some(h) => ProgramPrediction {
                op_logits,
                hidden: Some(h),
                a_q_scores: Some(self.score_question_args(b, h, q_tokens)),
                a_v_scores: Some(self.score_visual_args(b, h, v_objs)),
                a_d_scores: Some(self.decode_dep_args(b, h)),
            },
        }
    }

    /// Mask admitting only strictly earlier operations: cell (i, j) is
    /// kept iff `j < i`.
    pub fn dep_loss_mask(&self, n_ops: usize) -> Vec<bool> {
        let mut keep = vec![false; n_ops * self.config.n_maxop];
        for (i, chunk) in keep.chunks_mut(self.config.n_maxop).enumerate() {
            for (j, cell) in chunk.iter_mut().enumerate() {
                *cell = j < i;
            }
        }
        keep
    }

    /// The four supervision losses for a teacher-forced prediction against
    /// the argument targets. Empty programs reduce to the STOP-step
    /// cross-entropy with zero argument losses.
    pub fn program_losses(
        &self,
        b: &mut Bound,
        prediction: &ProgramPrediction,
        targets: &progsup_ir::ArgTargets,
        gt_ops: &[usize],
    ) -> DecoderLosses {
        assert_eq!(targets.a_q.len(), gt_ops.len(), "target rows must match the program length");
        let mut classes: Vec<usize> = gt_ops.to_vec();
        classes.push(self.stop_index);
        let l_op = b.tape.cross_entropy_mean(prediction.op_logits, &classes);
        if gt_ops.is_empty() {
            let zero = |b: &mut Bound| b.tape.constant(Tensor::scalar(0.0));
            let l_qarg = zero(b);
            let l_varg = zero(b);
            let l_dep = zero(b);
            return DecoderLosses { l_op, l_qarg, l_varg, l_dep };
        }
        let a_q = Tensor::from_rows(&targets.a_q);
        let a_v = Tensor::from_rows(&targets.a_v);
        let a_d = Tensor::from_rows(&targets.a_d);
        let l_qarg =
            b.tape.bce_with_logits_mean(prediction.a_q_scores.unwrap(), &a_q, None);
        let l_varg =
            b.tape.bce_with_logits_mean(prediction.a_v_scores.unwrap(), &a_v, None);
        let keep = self.dep_loss_mask(gt_ops.len());
        let l_dep =
            b.tape.bce_with_logits_mean(prediction.a_d_scores.unwrap(), &a_d, Some(&keep));
        DecoderLosses { l_op, l_qarg, l_varg, l_dep }
    }

    /// Greedy inference: free coarse decode, arguments thresholded at
    /// sigmoid ≥ 0.5 (logit ≥ 0), dependencies restricted to earlier
    /// operations. The output is structurally valid by construction.
    pub fn predict_program(
        &self,
        b: &mut Bound,
        cls: Var,
        q_tokens: Var,
        v_objs: Var,
        boxes: &[BBox],
    ) -> Program {
        let (ops, hidden) = self.decode_coarse_free(b, cls);
        let Some(hidden) = hidden else { return Program::default() };
        let aq = self.score_question_args(b, hidden, q_tokens);
        let av = self.score_visual_args(b, hidden, v_objs);
        let ad = self.decode_dep_args(b, hidden);
        let aq = b.tape.value(aq).clone();
        let av = b.tape.value(av).clone();
        let ad = b.tape.value(ad).clone();
        let program_ops = ops
            .iter()
            .enumerate()
            .map(|(i, &op_id)| {
                let q_args: Vec<usize> =
                    (0..aq.cols()).filter(|&j| aq.at(i, j) >= 0.0).collect();
                let v_args: Vec<VisualRef> = (0..av.cols())
                    .filter(|&j| av.at(i, j) >= 0.0)
                    .map(|j| VisualRef { obj: j, bbox: boxes[j] })
                    .collect();
                let dep_args: Vec<usize> = (0..ad.cols().min(i))
                    .filter(|&j| ad.at(i, j) >= 0.0)
                    .collect();
                ProgramOp::new(op_id)
                    .with_q_args(q_args)
                    .with_v_args(v_args)
                    .with_dep_args(dep_args)
            })
            .collect();
        Program::new(program_ops)
    }
}

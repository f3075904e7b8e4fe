//! The weighted training objective.

use progsup_autodiff::Var;
use progsup_model::{Bound, DecoderLosses, Encoder, ProgramDecoder, SampleInput, VlModel};

use crate::config::{LossFlags, LossWeights};
use crate::data::PreparedSample;

/// Scalar form of the objective, for reporting and tests:
/// `L = L_vqa + α·L_op + β·L_dep + γ·L_qarg + δ·L_varg`.
pub fn total_loss_value(
    l_vqa: f64,
    l_op: f64,
    l_dep: f64,
    l_qarg: f64,
    l_varg: f64,
    w: &LossWeights,
) -> f64 {
    l_vqa + w.alpha * l_op + w.beta * l_dep + w.gamma * l_qarg + w.delta * l_varg
}

/// Tape form of the objective. Disabled components are simply absent.
pub fn combine_losses(
    b: &mut Bound,
    l_vqa: Var,
    decoder: Option<&DecoderLosses>,
    w: &LossWeights,
    flags: &LossFlags,
) -> Var {
    let mut total = l_vqa;
    if let Some(d) = decoder {
        if flags.op {
            total = b.tape.add_scaled(total, d.l_op, w.alpha);
        }
        if flags.dep {
            total = b.tape.add_scaled(total, d.l_dep, w.beta);
        }
        if flags.qarg {
            total = b.tape.add_scaled(total, d.l_qarg, w.gamma);
        }
        if flags.varg {
            total = b.tape.add_scaled(total, d.l_varg, w.delta);
        }
    }
    total
}

/// Per-sample diagnostics collected during a pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleStats {
    pub loss: f64,
    pub l_vqa: f64,
    /// Coarse operation loss value, 0 when the decoder is disabled.
    pub l_op: f64,
    pub correct: bool,
}

/// Builds the full forward pass for one sample and returns the scalar
/// objective on the tape plus value-level diagnostics.
pub fn sample_objective(
    model: &VlModel,
    b: &mut Bound,
    s: &PreparedSample,
    w: &LossWeights,
    flags: &LossFlags,
) -> (Var, SampleStats) {
    let enc = &model.encoder;
    let q = enc.embed_question(b, &s.token_ids);
    let v = enc.embed_objects(b, &s.features, &s.boxes);
    let out = enc.encode(b, q, v, None, None, None);
    let logits = enc.answer_logits(b, out.cls);
    let l_vqa = b.tape.cross_entropy_mean(logits, &[s.answer]);

    let decoder_losses = if flags.any() {
        let token_rows: Vec<usize> = (1..=s.n_tokens).collect();
        let q_tokens = b.tape.gather_rows(out.tap_q, &token_rows);
        let pred =
            model.decoder.forward_teacher_forced(b, out.tap_cls, q_tokens, out.tap_v, &s.gt_ops);
        Some(model.decoder.program_losses(b, &pred, &s.targets, &s.gt_ops))
    } else {
        None
    };
    let total = combine_losses(b, l_vqa, decoder_losses.as_ref(), w, flags);

    let logits_t = b.tape.value(logits);
    let predicted = (0..logits_t.cols())
        .max_by(|&a, &c| logits_t.at(0, a).partial_cmp(&logits_t.at(0, c)).unwrap())
        .unwrap();
    let stats = SampleStats {
        loss: b.tape.value(total).item(),
        l_vqa: b.tape.value(l_vqa).item(),
        l_op: decoder_losses.as_ref().map_or(0.0, |d| b.tape.value(d.l_op).item()),
        correct: predicted == s.answer,
    };
    (total, stats)
}

/// Aggregate diagnostics for one batched pass.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchStats {
    pub total: f64,
    pub l_vqa: f64,
    pub l_op: f64,
    pub correct: usize,
    pub n: usize,
}

/// One tape for a whole chunk of samples. Returns the SUM of the
/// per-sample objectives (so gradients add across chunks) plus
/// diagnostics. Per-sample loss semantics match `sample_objective`
/// exactly: every component is that sample's mean over its own rows.
pub fn batch_objective(
    model: &VlModel,
    b: &mut Bound,
    samples: &[&PreparedSample],
    w: &LossWeights,
    flags: &LossFlags,
) -> (Var, BatchStats) {
    batch_objective_parts(&model.encoder, &model.decoder, b, samples, w, flags)
}

/// `batch_objective` with the model pre-split into its parts, for callers
/// holding a mutable borrow of the parameter set.
pub fn batch_objective_parts(
    encoder: &Encoder,
    decoder: &ProgramDecoder,
    b: &mut Bound,
    samples: &[&PreparedSample],
    w: &LossWeights,
    flags: &LossFlags,
) -> (Var, BatchStats) {
    assert!(!samples.is_empty());
    let bsz = samples.len();
    let inputs: Vec<SampleInput> = samples
        .iter()
        .map(|s| SampleInput { token_ids: &s.token_ids, features: &s.features, boxes: &s.boxes })
        .collect();
    let enc = encoder.encode_batch(b, &inputs);
    let logits = encoder.answer_logits(b, enc.cls);
    let answers: Vec<usize> = samples.iter().map(|s| s.answer).collect();
    let l_vqa_sum = b.tape.cross_entropy_weighted(logits, &answers, &vec![1.0; bsz]);
    let mut total = l_vqa_sum;
    let mut l_op_value = 0.0;

    if flags.any() {
        let gt: Vec<&[usize]> = samples.iter().map(|s| s.gt_ops.as_slice()).collect();
        let dec = decoder.decode_coarse_teacher_forced_batch(b, enc.tap_cls, &gt);
        if flags.op {
            let rows = (dec.l_max + 1) * bsz;
            let mut targets = vec![0usize; rows];
            let mut weights = vec![0.0; rows];
            for (i, s) in samples.iter().enumerate() {
                let li = s.gt_ops.len();
                let wrow = 1.0 / (li + 1) as f64;
                for t in 0..=li {
                    targets[t * bsz + i] =
                        if t < li { s.gt_ops[t] } else { decoder.stop_index };
                    weights[t * bsz + i] = wrow;
                }
            }
            let l_op_sum = b.tape.cross_entropy_weighted(dec.op_logits, &targets, &weights);
            l_op_value = b.tape.value(l_op_sum).item();
            total = b.tape.add_scaled(total, l_op_sum, w.alpha);
        }
        if let Some(hidden) = dec.hidden {
            if flags.qarg {
                let mut h_idx = Vec::new();
                let mut item_idx = Vec::new();
                let mut targets = Vec::new();
                let mut weights = Vec::new();
                for (i, s) in samples.iter().enumerate() {
                    let li = s.gt_ops.len();
                    if li == 0 || s.n_tokens == 0 {
                        continue;
                    }
                    let cw = 1.0 / (li * s.n_tokens) as f64;
                    for t in 0..li {
                        for j in 0..s.n_tokens {
                            h_idx.push(dec.offsets[i] + t);
                            item_idx.push(enc.layout.token_row(i, j));
                            targets.push(s.targets.a_q[t][j]);
                            weights.push(cw);
                        }
                    }
                }
                if !h_idx.is_empty() {
                    let h_rep = b.tape.gather_rows(hidden, &h_idx);
                    let it_rep = b.tape.gather_rows(enc.tap_q, &item_idx);
                    let cat = b.tape.concat_cols(&[h_rep, it_rep]);
                    let scores = decoder.question_affinity_mlp(b, cat);
                    let l = b.tape.bce_with_logits_weighted(scores, &targets, &weights);
                    total = b.tape.add_scaled(total, l, w.gamma);
                }
            }
            if flags.varg {
                let mut h_idx = Vec::new();
                let mut item_idx = Vec::new();
                let mut targets = Vec::new();
                let mut weights = Vec::new();
                for (i, s) in samples.iter().enumerate() {
                    let li = s.gt_ops.len();
                    let no = s.boxes.len();
                    if li == 0 || no == 0 {
                        continue;
                    }
                    let cw = 1.0 / (li * no) as f64;
                    for t in 0..li {
                        for j in 0..no {
                            h_idx.push(dec.offsets[i] + t);
                            item_idx.push(enc.layout.object_row(i, j));
                            targets.push(s.targets.a_v[t][j]);
                            weights.push(cw);
                        }
                    }
                }
                if !h_idx.is_empty() {
                    let h_rep = b.tape.gather_rows(hidden, &h_idx);
                    let it_rep = b.tape.gather_rows(enc.tap_v, &item_idx);
                    let cat = b.tape.concat_cols(&[h_rep, it_rep]);
                    let scores = decoder.visual_affinity_mlp(b, cat);
                    let l = b.tape.bce_with_logits_weighted(scores, &targets, &weights);
                    total = b.tape.add_scaled(total, l, w.delta);
                }
            }
            if flags.dep {
                let n_maxop = decoder.config.n_maxop;
                let dep_scores = decoder.decode_dep_args(b, hidden);
                let mut targets = Vec::new();
                let mut weights = Vec::new();
                for s in samples.iter() {
                    let li = s.gt_ops.len();
                    let kept: usize = (0..li).map(|t| t.min(n_maxop)).sum();
                    let cw = if kept == 0 { 0.0 } else { 1.0 / kept as f64 };
                    for t in 0..li {
                        for j in 0..n_maxop {
                            targets.push(s.targets.a_d[t][j]);
                            weights.push(if j < t { cw } else { 0.0 });
                        }
                    }
                }
                if !targets.is_empty() {
                    let l = b.tape.bce_with_logits_weighted(dep_scores, &targets, &weights);
                    total = b.tape.add_scaled(total, l, w.beta);
                }
            }
        }
    }

    let logits_t = b.tape.value(logits);
    let mut correct = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let row: Vec<f64> = (0..logits_t.cols()).map(|j| logits_t.at(i, j)).collect();
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, c| a.1.partial_cmp(c.1).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        correct += (pred == s.answer) as usize;
    }
    let stats = BatchStats {
        total: b.tape.value(total).item(),
        l_vqa: b.tape.value(l_vqa_sum).item(),
        l_op: l_op_value,
        correct,
        n: bsz,
    };
    (total, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_components_give_zero_total() {
        let w = LossWeights::default();
        assert_eq!(total_loss_value(0.0, 0.0, 0.0, 0.0, 0.0, &w), 0.0);
    }

    #[test]
    fn zero_weights_reduce_to_the_vqa_loss() {
        let w = LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0, delta: 0.0 };
        assert_eq!(total_loss_value(0.734, 5.0, 5.0, 5.0, 5.0, &w), 0.734);
    }

    #[test]
    fn unit_components_at_default_weights_sum_to_104() {
        let w = LossWeights::default();
        assert_eq!(total_loss_value(1.0, 1.0, 1.0, 1.0, 1.0, &w), 104.0);
    }

    #[test]
    fn total_is_linear_in_each_weight() {
        let base = LossWeights::default();
        let components = (0.3, 0.7, 0.2, 0.9, 0.4);
        let at = |w: &LossWeights| {
            total_loss_value(components.0, components.1, components.2, components.3, components.4, w)
        };
        let mut w2 = base;
        w2.delta += 1.0;
        assert!((at(&w2) - at(&base) - components.4).abs() < 1e-12);
        let mut w3 = base;
        w3.alpha += 2.0;
        assert!((at(&w3) - at(&base) - 2.0 * components.1).abs() < 1e-12);
    }
}

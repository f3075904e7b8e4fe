use progsup_autodiff::{Tape, Tensor};
use progsup_ir::{
    build_targets, validate_program, ArgTargets, BBox, OperationVocab, Program, ProgramOp,
    ValidationLimits, VisualRef,
};
use progsup_model::{Bound, DecoderConfig, ModelConfig, ProgramPrediction, Tap, VlModel};

fn toy_model(seed: u64) -> VlModel {
    let cfg = ModelConfig {
        d_hidden: 16,
        n_heads: 2,
        l_lang: 1,
        l_vis: 1,
        l_x: 1,
        ffn_mult: 2,
        max_tokens: 8,
        max_objects: 4,
        word_vocab: 8,
        feat_dim: 6,
        answer_vocab: 5,
        tap: Tap::Crossmodal,
    };
    VlModel::new(cfg, DecoderConfig { n_maxop: 4, n_op: 6 }, 5, seed)
}

fn boxes(n: usize) -> Vec<BBox> {
    (0..n).map(|i| BBox::new(0.2 * i as f64, 0.1, 0.2 * i as f64 + 0.15, 0.3)).collect()
}

fn feats(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..6).map(|j| ((i * 6 + j) as f64 * 0.31).cos()).collect()).collect()
}

fn zero_param(model: &mut VlModel, name: &str) {
    let id = model.params.lookup(name).unwrap_or_else(|| panic!("missing param {name}"));
    let shape = model.params.value(id).shape().to_vec();
    model.params.set_value(id, Tensor::new(shape.clone(), vec![0.0; shape.iter().product()]));
}

fn set_param(model: &mut VlModel, name: &str, data: Vec<f64>) {
    let id = model.params.lookup(name).unwrap();
    let shape = model.params.value(id).shape().to_vec();
    model.params.set_value(id, Tensor::new(shape, data));
}

#[test]
fn free_decode_emits_nothing_when_stop_dominates() {
    let mut model = toy_model(1);
    // force the op head bias to put all mass on STOP (index 5)
    set_param(&mut model, "dec.op_head.2.b", vec![0.0, 0.0, 0.0, 0.0, 0.0, 100.0]);
    let mut tape = Tape::new();
    let mut b = Bound::new(&mut tape, &model.params);
    let cls = b.tape.constant(Tensor::row(&[0.1; 16]));
    let (ops, hidden) = model.decoder.decode_coarse_free(&mut b, cls);
    assert!(ops.is_empty());
    assert!(hidden.is_none());
}

#[test]
fn free_decode_never_exceeds_the_operation_cap() {
    let mut model = toy_model(2);
    // suppress STOP entirely
    set_param(&mut model, "dec.op_head.2.b", vec![0.0, 0.0, 0.0, 0.0, 0.0, -100.0]);
    let mut tape = Tape::new();
    let mut b = Bound::new(&mut tape, &model.params);
    let cls = b.tape.constant(Tensor::row(&[0.1; 16]));
    let (ops, _) = model.decoder.decode_coarse_free(&mut b, cls);
    assert_eq!(ops.len(), 4, "decode must stop at n_maxop");
}

#[test]
fn saturated_logits_drive_all_four_losses_to_the_floor() {
    let model = toy_model(3);
    let gt_ops = vec![0usize, 2];
    let n_tokens = 3;
    let n_objects = 2;
    let targets = ArgTargets {
        a_q: vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]],
        a_v: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        a_d: vec![vec![0.0; 4], {
            let mut r = vec![0.0; 4];
            r[0] = 1.0;
            r
        }],
    };
    let mut tape = Tape::new();
    let mut b = Bound::new(&mut tape, &model.params);
    let sat = 1e4;
    let mut op_logits = Tensor::zeros(3, 6);
    for (i, &c) in [0usize, 2, 5].iter().enumerate() {
        for j in 0..6 {
            op_logits.data_mut()[i * 6 + j] = if j == c { sat } else { -sat };
        }
    }
    let to_logits = |m: &Vec<Vec<f64>>| -> Tensor {
        let rows: Vec<Vec<f64>> = m
            .iter()
            .map(|r| r.iter().map(|&t| if t >= 0.5 { sat } else { -sat }).collect())
            .collect();
        Tensor::from_rows(&rows)
    };
    let prediction = ProgramPrediction {
        op_logits: b.tape.constant(op_logits),
        hidden: None,
        a_q_scores: Some(b.tape.constant(to_logits(&targets.a_q))),
        a_v_scores: Some(b.tape.constant(to_logits(&targets.a_v))),
        a_d_scores: Some(b.tape.constant(to_logits(&targets.a_d))),
    };
    let losses = model.decoder.program_losses(&mut b, &prediction, &targets, &gt_ops);
    assert!(b.tape.value(losses.l_op).item() < 1e-3);
    assert!(b.tape.value(losses.l_qarg).item() < 1e-3);
    assert!(b.tape.value(losses.l_varg).item() < 1e-3);
    assert!(b.tape.value(losses.l_dep).item() < 1e-3);
    let _ = (n_tokens, n_objects);
}

#[test]
fn zero_affinity_weights_give_ln_two_bce() {
    let mut model = toy_model(4);
    zero_param(&mut model, "dec.q_aff.2.w");
    zero_param(&mut model, "dec.q_aff.2.b");
    let mut tape = Tape::new();
    let mut b = Bound::new(&mut tape, &model.params);
    let hidden = b.tape.constant(Tensor::from_rows(&feats(2).iter().map(|f| {
        let mut v = f.clone();
        v.resize(16, 0.3);
        v
    }).collect::<Vec<_>>()));
    let q_tokens = b.tape.constant(Tensor::full(3, 16, 0.25));
    let scores = model.decoder.score_question_args(&mut b, hidden, q_tokens);
    assert_eq!(b.tape.value(scores).shape(), &[2, 3]);
    assert!(b.tape.value(scores).data().iter().all(|&s| s == 0.0));
    let targets = Tensor::full(2, 3, 0.7);
    let bce = b.tape.bce_with_logits_mean(scores, &targets, None);
    assert!((b.tape.value(bce).item() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn dependency_mask_blocks_self_and_forward_slots() {
    let model = toy_model(5);
    let keep = model.decoder.dep_loss_mask(3);
    // rows of width n_maxop = 4
    assert_eq!(keep[0..4], [false, false, false, false], "op 0 has no earlier ops");
    assert_eq!(keep[4..8], [true, false, false, false]);
    assert_eq!(keep[8..12], [true, true, false, false]);
}

#[test]
fn zero_dependency_head_scores_ln_two_on_unmasked_cells() {
    let mut model = toy_model(6);
    zero_param(&mut model, "dec.dep_proj.w");
    zero_param(&mut model, "dec.dep_proj.b");
    let mut tape = Tape::new();
    let mut b = Bound::new(&mut tape, &model.params);
    let hidden = b.tape.constant(Tensor::full(3, 16, 0.2));
    let scores = model.decoder.decode_dep_args(&mut b, hidden);
    let keep = model.decoder.dep_loss_mask(3);
    let targets = Tensor::zeros(3, 4);
    let bce = b.tape.bce_with_logits_mean(scores, &targets, Some(&keep));
    assert!((b.tape.value(bce).item() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn empty_program_reduces_to_stop_step_cross_entropy() {
    let model = toy_model(7);
    let mut tape = Tape::new();
    let mut b = Bound::new(&mut tape, &model.params);
    let cls = b.tape.constant(Tensor::row(&[0.05; 16]));
    let q_tokens = b.tape.constant(Tensor::full(2, 16, 0.1));
    let v_objs = b.tape.constant(Tensor::full(2, 16, 0.1));
    let pred = model.decoder.forward_teacher_forced(&mut b, cls, q_tokens, v_objs, &[]);
    assert_eq!(b.tape.value(pred.op_logits).rows(), 1, "only the STOP step");
    let targets = ArgTargets { a_q: vec![], a_v: vec![], a_d: vec![] };
    let losses = model.decoder.program_losses(&mut b, &pred, &targets, &[]);
    assert_eq!(b.tape.value(losses.l_qarg).item(), 0.0);
    assert_eq!(b.tape.value(losses.l_varg).item(), 0.0);
    assert_eq!(b.tape.value(losses.l_dep).item(), 0.0);
    assert!(b.tape.value(losses.l_op).item() > 0.0);
}

#[test]
fn teacher_forcing_runs_len_plus_one_steps_with_matching_score_shapes() {
    let model = toy_model(8);
    let mut tape = Tape::new();
    let mut b = Bound::new(&mut tape, &model.params);
    let cls = b.tape.constant(Tensor::row(&[0.3; 16]));
    let q_tokens = b.tape.constant(Tensor::full(5, 16, 0.2));
    let v_objs = b.tape.constant(Tensor::full(3, 16, -0.1));
    let pred = model.decoder.forward_teacher_forced(&mut b, cls, q_tokens, v_objs, &[1, 0, 3]);
    assert_eq!(b.tape.value(pred.op_logits).shape(), &[4, 6]);
    assert_eq!(b.tape.value(pred.hidden.unwrap()).shape(), &[3, 16]);
    assert_eq!(b.tape.value(pred.a_q_scores.unwrap()).shape(), &[3, 5]);
    assert_eq!(b.tape.value(pred.a_v_scores.unwrap()).shape(), &[3, 3]);
    assert_eq!(b.tape.value(pred.a_d_scores.unwrap()).shape(), &[3, 4]);
}

#[test]
fn losses_are_invariant_to_object_permutation_with_permuted_targets() {
    let model = toy_model(9);
    let gt_ops = vec![0usize, 1];
    let f = feats(3);
    let bb = boxes(3);
    let gt_box = bb[1];
    let program = Program::new(vec![
        ProgramOp::new(0).with_q_args(vec![0]).with_v_args(vec![VisualRef { obj: 1, bbox: gt_box }]),
        ProgramOp::new(1).with_dep_args(vec![0]),
    ]);
    let run = |order: &[usize]| -> (f64, f64, f64, f64) {
        let det: Vec<BBox> = order.iter().map(|&i| bb[i]).collect();
        let targets = build_targets(&program, 2, &det, 4);
        let mut tape = Tape::new();
        let mut b = Bound::new(&mut tape, &model.params);
        let cls = b.tape.constant(Tensor::row(&[0.2; 16]));
        let q_tokens = b.tape.constant(Tensor::full(2, 16, 0.15));
        let rows: Vec<Vec<f64>> = order
            .iter()
            .map(|&i| {
                let mut v = f[i].clone();
                v.resize(16, 0.1 * i as f64);
                v
            })
            .collect();
        let v_objs = b.tape.constant(Tensor::from_rows(&rows));
        let pred = model.decoder.forward_teacher_forced(&mut b, cls, q_tokens, v_objs, &gt_ops);
        let losses = model.decoder.program_losses(&mut b, &pred, &targets, &gt_ops);
        (
            b.tape.value(losses.l_op).item(),
            b.tape.value(losses.l_qarg).item(),
            b.tape.value(losses.l_varg).item(),
            b.tape.value(losses.l_dep).item(),
        )
    };
    let a = run(&[0, 1, 2]);
    let c = run(&[2, 1, 0]);
    assert!((a.0 - c.0).abs() < 1e-12);
    assert!((a.1 - c.1).abs() < 1e-12);
    assert!((a.2 - c.2).abs() < 1e-12, "{} vs {}", a.2, c.2);
    assert!((a.3 - c.3).abs() < 1e-12);
}

#[test]
fn predicted_programs_always_validate() {
    let vocab = OperationVocab::desk();
    for seed in 0..20u64 {
        let model = VlModel::new(
            ModelConfig {
                d_hidden: 16,
                n_heads: 2,
                l_lang: 1,
                l_vis: 1,
                l_x: 1,
                ffn_mult: 2,
                max_tokens: 8,
                max_objects: 4,
                word_vocab: 8,
                feat_dim: 6,
                answer_vocab: 5,
                tap: Tap::Crossmodal,
            },
            DecoderConfig { n_maxop: 9, n_op: vocab.len() },
            vocab.stop_index(),
            seed,
        );
        let mut tape = Tape::new();
        let mut b = Bound::new(&mut tape, &model.params);
        let q = model.encoder.embed_question(&mut b, &[1, 2, 3]);
        let v = model.encoder.embed_objects(&mut b, &feats(3), &boxes(3));
        let out = model.encoder.encode(&mut b, q, v, None, None, None);
        let q_tokens = b.tape.gather_rows(out.tap_q, &[1, 2, 3]);
        let program = model.decoder.predict_program(&mut b, out.tap_cls, q_tokens, out.tap_v, &boxes(3));
        let limits = ValidationLimits {
            vocab: &vocab,
            n_tokens: 3,
            n_objects: 3,
            n_maxop: 9,
            require_single_root: false,
        };
        let violations = validate_program(&program, &limits);
        assert!(violations.is_empty(), "seed {seed}: {violations:?}");
    }
}

#[test]
fn full_decoder_loss_passes_the_finite_difference_check() {
    let mut model = toy_model(10);
    let gt_ops = vec![0usize, 2];
    let program = Program::new(vec![
        ProgramOp::new(0).with_q_args(vec![1]).with_v_args(vec![VisualRef {
            obj: 0,
            bbox: boxes(2)[0],
        }]),
        ProgramOp::new(2).with_dep_args(vec![0]),
    ]);
    let targets = build_targets(&program, 3, &boxes(2), 4);
    let f = feats(2);
    let bb = boxes(2);
    let err = progsup_model::param_grad_check(
        &mut model.params,
        |b| {
            let q = model.encoder.embed_question(b, &[0, 1, 2]);
            let v = model.encoder.embed_objects(b, &f, &bb);
            let out = model.encoder.encode(b, q, v, None, None, None);
            let q_tokens = b.tape.gather_rows(out.tap_q, &[1, 2, 3]);
            let pred = model.decoder.forward_teacher_forced(
                b,
                out.tap_cls,
                q_tokens,
                out.tap_v,
                &gt_ops,
            );
            let losses = model.decoder.program_losses(b, &pred, &targets, &gt_ops);
            let logits = model.encoder.answer_logits(b, out.cls);
            let l_vqa = b.tape.cross_entropy_mean(logits, &[1]);
            let t = b.tape.add_scaled(l_vqa, losses.l_op, 1.0);
            let t = b.tape.add_scaled(t, losses.l_dep, 1.0);
            let t = b.tape.add_scaled(t, losses.l_qarg, 1.0);
            b.tape.add_scaled(t, losses.l_varg, 100.0)
        },
        1e-5,
        2,
        55,
    );
    assert!(err < 1e-4, "full-model finite-difference error {err}");
}

use progsup_model::{DecoderConfig, ModelConfig, Tap, VlModel};
use progsup_synth::{gen_corpus, build_manifest, DataConfig, Split, VisualMode};
use progsup_train::{
    apply_to_model, evaluate_answers, load_checkpoint, log_to_csv, model_config_for,
    prepare_samples, restore_params, save_checkpoint, snapshot, train_stage,
    finetune_model_from_oracle, LossFlags, LossWeights, PreparedSample, TrainConfig, TrainData,
    Vocabulary, VISUAL_PROJECTION_PARAMS,
};

const STOP: usize = 23;

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        d_hidden: 32,
        n_heads: 2,
        l_lang: 2,
        l_vis: 1,
        l_x: 1,
        ffn_mult: 2,
        max_tokens: 16,
        max_objects: 16,
        word_vocab: 0, // filled from the manifest
        feat_dim: 0,
        answer_vocab: 0,
        tap: Tap::Crossmodal,
    }
}

struct Setup {
    model: VlModel,
    train: Vec<PreparedSample>,
    val: Vec<PreparedSample>,
}

fn setup(n: usize, seed: u64, mode: VisualMode, model_seed: u64) -> Setup {
    let data_cfg = DataConfig { n_samples: n, ..DataConfig::default() };
    let samples = gen_corpus(seed, &data_cfg, mode);
    let manifest = build_manifest(seed, &data_cfg, mode, &samples);
    let vocab = Vocabulary::from_manifest(&manifest);
    let model_cfg = model_config_for(&manifest, &tiny_model_config());
    let dec_cfg = DecoderConfig { n_maxop: 9, n_op: manifest.op_labels.len() };
    let prepared = prepare_samples(&samples, &vocab, dec_cfg.n_maxop);
    let train: Vec<PreparedSample> =
        prepared.iter().filter(|s| s.split == Split::Train).cloned().collect();
    let val: Vec<PreparedSample> =
        prepared.iter().filter(|s| s.split == Split::Val).cloned().collect();
    Setup { model: VlModel::new(model_cfg, dec_cfg, STOP, model_seed), train, val }
}

#[test]
fn identical_seeds_give_bit_identical_metric_logs() {
    let cfg = TrainConfig { epochs: 2, batch_size: 16, lr: 5e-4, seed: 7, ..TrainConfig::default() };
    let run = || {
        let mut s = setup(120, 3, VisualMode::Oracle, 50);
        let data = TrainData { train: &s.train, val: &s.val };
        let out = train_stage(&mut s.model, &data, &cfg, "det").unwrap();
        log_to_csv(&out.log)
    };
    assert_eq!(run(), run());
}

#[test]
fn fifty_sample_overfit_at_default_weights_reaches_full_accuracy() {
    let mut s = setup(80, 11, VisualMode::Oracle, 1);
    let train: Vec<PreparedSample> = s.train.iter().take(50).cloned().collect();
    // default loss weights, in particular the heavy visual-argument term
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 2,
        lr: 2e-3,
        seed: 5,
        ..TrainConfig::default()
    };
    let data = TrainData { train: &train, val: &train };
    let out = train_stage(&mut s.model, &data, &cfg, "overfit").unwrap();
    assert_eq!(out.final_train_acc, 1.0, "train accuracy {}", out.final_train_acc);
}

#[test]
fn op_loss_collapses_within_five_hundred_steps_on_an_overfit_run() {
    let mut s = setup(80, 11, VisualMode::Oracle, 1);
    let train: Vec<PreparedSample> = s.train.iter().take(50).cloned().collect();
    let cfg = TrainConfig {
        epochs: 38,
        batch_size: 4,
        lr: 3e-3,
        seed: 5,
        flags: LossFlags { op: true, dep: false, qarg: false, varg: false },
        ..TrainConfig::default()
    };
    let data = TrainData { train: &train, val: &train };
    let out = train_stage(&mut s.model, &data, &cfg, "op_overfit").unwrap();
    assert!(out.steps <= 500, "{} steps", out.steps);
    let l_op: Vec<f64> =
        out.log.iter().filter(|r| r.metric == "l_op").map(|r| r.value).collect();
    assert!(l_op.last().unwrap() < &0.1, "final l_op {}", l_op.last().unwrap());
    // decreasing trend: every fifth-epoch reading is below the one before
    for w in l_op.chunks(5).collect::<Vec<_>>().windows(2) {
        assert!(w[1][0] < w[0][0], "op loss not decreasing: {l_op:?}");
    }
}

#[test]
fn zero_weights_match_the_disabled_decoder_path_exactly() {
    let cfg_flags_off = TrainConfig {
        epochs: 2,
        batch_size: 16,
        lr: 5e-4,
        seed: 9,
        flags: LossFlags::none(),
        ..TrainConfig::default()
    };
    let cfg_weights_zero = TrainConfig {
        weights: LossWeights { alpha: 0.0, beta: 0.0, gamma: 0.0, delta: 0.0 },
        flags: LossFlags::all(),
        ..cfg_flags_off.clone()
    };
    let run = |cfg: &TrainConfig| {
        let mut s = setup(100, 21, VisualMode::Noisy, 77);
        let data = TrainData { train: &s.train, val: &s.val };
        let out = train_stage(&mut s.model, &data, cfg, "x").unwrap();
        out.log
            .iter()
            .filter(|r| r.metric == "acc" || (r.metric == "loss" && r.split == "val"))
            .map(|r| r.value)
            .collect::<Vec<f64>>()
    };
    let a = run(&cfg_flags_off);
    let b = run(&cfg_weights_zero);
    assert_eq!(a, b, "zero-weight supervision must reproduce the plain path");
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let s = setup(30, 2, VisualMode::Noisy, 4);
    let dir = std::env::temp_dir().join("progsup_ckpt_roundtrip");
    let _ = std::fs::remove_dir_all(&dir);
    let path = dir.join("model.psup");
    let ckpt = snapshot(&s.model, None, 17, 42);
    save_checkpoint(&path, &ckpt).unwrap();
    let bytes1 = std::fs::read(&path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.step, 17);
    assert_eq!(loaded.seed, 42);
    let path2 = dir.join("model2.psup");
    save_checkpoint(&path2, &loaded).unwrap();
    assert_eq!(bytes1, std::fs::read(&path2).unwrap());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn corrupted_magic_is_rejected() {
    let s = setup(30, 2, VisualMode::Noisy, 4);
    let dir = std::env::temp_dir().join("progsup_ckpt_magic");
    let _ = std::fs::remove_dir_all(&dir);
    let path = dir.join("model.psup");
    save_checkpoint(&path, &snapshot(&s.model, None, 0, 0)).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(err.to_string().contains("magic"), "{err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn truncated_blob_is_rejected() {
    let s = setup(30, 2, VisualMode::Noisy, 4);
    let dir = std::env::temp_dir().join("progsup_ckpt_trunc");
    let _ = std::fs::remove_dir_all(&dir);
    let path = dir.join("model.psup");
    save_checkpoint(&path, &snapshot(&s.model, None, 0, 0)).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(err.to_string().contains("truncated"), "{err}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn loading_into_a_mismatched_model_lists_the_offending_tensors() {
    let s = setup(30, 2, VisualMode::Noisy, 4);
    let ckpt = snapshot(&s.model, None, 0, 0);
    // a model with a different hidden size
    let mut other_cfg = s.model.encoder.config.clone();
    other_cfg.d_hidden = 64;
    let mut other = VlModel::new(other_cfg, s.model.decoder.config.clone(), STOP, 9);
    let err = apply_to_model(&mut other, &ckpt, &[]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("enc.word_emb"), "error should name tensors: {msg}");
}

#[test]
fn finetune_model_differs_from_oracle_only_in_the_visual_projection() {
    let oracle_setup = setup(60, 13, VisualMode::Oracle, 31);
    let noisy_setup = setup(60, 13, VisualMode::Noisy, 32);
    let oracle_model = oracle_setup.model;
    let noisy_cfg = noisy_setup.model.encoder.config.clone();
    let dec_cfg = oracle_model.decoder.config.clone();
    let ft = finetune_model_from_oracle(&oracle_model, &noisy_cfg, &dec_cfg, STOP, 99);
    for (i, (name, value)) in ft.params.iter().enumerate() {
        let (src_name, src_value) = oracle_model.params.iter().nth(i).unwrap();
        assert_eq!(name, src_name);
        if VISUAL_PROJECTION_PARAMS.contains(&name) {
            if name == "enc.feat_proj.b" {
                // same shape but freshly re-initialized to zeros either way
                continue;
            }
            assert_ne!(value.shape(), src_value.shape(), "{name} must be re-initialized");
        } else {
            assert_eq!(value.data(), src_value.data(), "{name} must carry over");
        }
    }
}

#[test]
fn evaluation_is_consistent_with_restored_snapshots() {
    let mut s = setup(100, 5, VisualMode::Oracle, 8);
    let cfg =
        TrainConfig { epochs: 2, batch_size: 16, lr: 5e-4, seed: 3, ..TrainConfig::default() };
    let data = TrainData { train: &s.train, val: &s.val };
    let out = train_stage(&mut s.model, &data, &cfg, "snap").unwrap();
    let (final_acc, _) = evaluate_answers(&s.model, &s.val, &cfg);
    restore_params(&mut s.model, &out.best_params);
    let (best_acc, _) = evaluate_answers(&s.model, &s.val, &cfg);
    assert!((best_acc - out.best_val_acc).abs() < 1e-12);
    assert!(best_acc >= final_acc - 1e-12);
}

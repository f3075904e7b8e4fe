use progsup_autodiff::Tape;
use progsup_model::{Bound, DecoderConfig, ModelConfig, VlModel};
use progsup_synth::{build_manifest, gen_corpus, DataConfig, Split, VisualMode};
use progsup_train::*;
use std::collections::BTreeMap;

fn main() {
    let n: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(6000);
    let epochs: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(6);
    let lr: f64 = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let data_cfg = DataConfig { n_samples: n, ..DataConfig::default() };
    let samples = gen_corpus(1, &data_cfg, VisualMode::Oracle);
    let manifest = build_manifest(1, &data_cfg, VisualMode::Oracle, &samples);
    let vocab = Vocabulary::from_manifest(&manifest);
    let model_cfg = model_config_for(&manifest, &ModelConfig::desk());
    let dec_cfg = DecoderConfig { n_maxop: 9, n_op: manifest.op_labels.len() };
    let prepared = prepare_samples(&samples, &vocab, 9);
    let only: Option<usize> = std::env::args().nth(5).and_then(|s| s.parse().ok());
    let keep = |s: &&PreparedSample| only.map_or(true, |t| s.template_id == t);
    let train: Vec<PreparedSample> =
        prepared.iter().filter(|s| s.split == Split::Train).filter(keep).cloned().collect();
    let val: Vec<PreparedSample> =
        prepared.iter().filter(|s| s.split == Split::Val).filter(keep).cloned().collect();
    println!("train {} val {}", train.len(), val.len());
    let mut model = VlModel::new(model_cfg, dec_cfg, 23, 7);
    let flags = match std::env::args().nth(4).as_deref() {
        Some("none") => LossFlags::none(),
        _ => LossFlags::all(),
    };
    let batch: usize = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(64);
    let mode_arg = std::env::args().nth(7);
    let _ = mode_arg;
    let cfg = TrainConfig { epochs, batch_size: batch, lr, seed: 7, flags, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let out = train_stage(&mut model, &TrainData { train: &train, val: &val }, &cfg, "diag").unwrap();
    println!("train time {:?}", t0.elapsed());
    for r in &out.log {
        if r.metric == "acc" && r.split == "val" {
            println!("epoch {} val acc {:.4}", r.epoch, r.value);
        }
    }
    restore_params(&mut model, &out.best_params);
    // per-template accuracy on val
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let w = LossWeights::default();
    let flags = LossFlags::none();
    for chunk in val.chunks(32) {
        let refs: Vec<&PreparedSample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let mut bound = Bound::new(&mut tape, &model.params);
        let inputs: Vec<progsup_model::SampleInput> = refs.iter()
            .map(|s| progsup_model::SampleInput { token_ids: &s.token_ids, features: &s.features, boxes: &s.boxes }).collect();
        let enc = model.encoder.encode_batch(&mut bound, &inputs);
        let logits = model.encoder.answer_logits(&mut bound, enc.cls);
        let lt = bound.tape.value(logits).clone();
        for (i, s) in refs.iter().enumerate() {
            let pred = (0..lt.cols()).max_by(|&a, &c| lt.at(i,a).partial_cmp(&lt.at(i,c)).unwrap()).unwrap();
            let e = per.entry(s.template_id).or_insert((0,0));
            e.1 += 1;
            if pred == s.answer { e.0 += 1; }
        }
        let _ = (w.alpha, flags.op);
    }
    println!("best val acc {:.4}", out.best_val_acc);
    for (t, (c, n)) in per {
        println!("template {t:2}: {:.3} ({c}/{n})", c as f64 / n as f64);
    }
}

use std::time::Instant;
use progsup_model::{DecoderConfig, ModelConfig, VlModel};
use progsup_synth::{build_manifest, gen_corpus, DataConfig, Split, VisualMode};
use progsup_train::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-4);
    let t0 = Instant::now();
    let data_cfg = DataConfig { n_samples: n, ..DataConfig::default() };
    let samples = gen_corpus(1, &data_cfg, VisualMode::Oracle);
    let manifest = build_manifest(1, &data_cfg, VisualMode::Oracle, &samples);
    println!("gen: {:?} ({} samples)", t0.elapsed(), samples.len());
    let vocab = Vocabulary::from_manifest(&manifest);
    let model_cfg = model_config_for(&manifest, &ModelConfig::desk());
    let dec_cfg = DecoderConfig { n_maxop: 9, n_op: manifest.op_labels.len() };
    let prepared = prepare_samples(&samples, &vocab, 9);
    let train: Vec<PreparedSample> = prepared.iter().filter(|s| s.split == Split::Train).cloned().collect();
    let val: Vec<PreparedSample> = prepared.iter().filter(|s| s.split == Split::Val).cloned().collect();
    println!("train {} val {}", train.len(), val.len());
    let mut model = VlModel::new(model_cfg, dec_cfg, 23, 7);
    println!("params: {}", model.total_parameters());
    let flags = match std::env::args().nth(4).as_deref() {
        Some("none") => LossFlags::none(),
        _ => LossFlags::all(),
    };
    let cfg = TrainConfig { epochs, batch_size: 64, lr, seed: 7, flags, ..TrainConfig::default() };
    let t1 = Instant::now();
    let out = train_stage(&mut model, &TrainData { train: &train, val: &val }, &cfg, "cal").unwrap();
    let dt = t1.elapsed();
    println!("train: {:?} total, {:?}/epoch", dt, dt / epochs as u32);
    for r in &out.log {
        if r.metric == "acc" { println!("epoch {} {} acc {:.4}", r.epoch, r.split, r.value); }
    }
}

use progsup_model::{DecoderConfig, ModelConfig, Tap, VlModel};
use progsup_synth::{build_manifest, gen_corpus, DataConfig, Split, VisualMode};
use progsup_train::*;

fn main() {
    let data_cfg = DataConfig { n_samples: 80, ..DataConfig::default() };
    let samples = gen_corpus(11, &data_cfg, VisualMode::Oracle);
    let manifest = build_manifest(11, &data_cfg, VisualMode::Oracle, &samples);
    let vocab = Vocabulary::from_manifest(&manifest);
    let base = ModelConfig {
        d_hidden: 32, n_heads: 2, l_lang: 2, l_vis: 1, l_x: 1, ffn_mult: 2,
        max_tokens: 16, max_objects: 16, word_vocab: 0, feat_dim: 0, answer_vocab: 0,
        tap: Tap::Crossmodal,
    };
    let model_cfg = model_config_for(&manifest, &base);
    let dec_cfg = DecoderConfig { n_maxop: 9, n_op: manifest.op_labels.len() };
    let prepared = prepare_samples(&samples, &vocab, 9);
    let train: Vec<PreparedSample> =
        prepared.iter().filter(|s| s.split == Split::Train).take(50).cloned().collect();
    println!("answers distinct: {}", {
        let mut a: Vec<usize> = train.iter().map(|s| s.answer).collect(); a.sort(); a.dedup(); a.len()
    });
    let variants: Vec<(&str, TrainConfig)> = vec![
        ("d100-e30-b2", TrainConfig { epochs: 30, batch_size: 2, lr: 3e-3, seed: 5,
            ..TrainConfig::default() }),
        ("d100-e30-b2lr2", TrainConfig { epochs: 30, batch_size: 2, lr: 2e-3, seed: 5,
            ..TrainConfig::default() }),
        ("d1-e20-b2", TrainConfig { epochs: 20, batch_size: 2, lr: 3e-3, seed: 5,
            weights: LossWeights { delta: 1.0, ..LossWeights::default() },
            ..TrainConfig::default() }),
    ];
    for (name, cfg) in variants {
        let lr = name;
        let mut model = VlModel::new(model_cfg.clone(), dec_cfg.clone(), 23, 1);
        let data = TrainData { train: &train, val: &train };
        let out = train_stage(&mut model, &data, &cfg, "dbg").unwrap();
        let accs: Vec<String> = out.log.iter().filter(|r| r.split=="train" && r.metric=="acc")
            .map(|r| format!("{:.2}", r.value)).collect();
        let lops: Vec<String> = out.log.iter().filter(|r| r.metric=="l_op")
            .map(|r| format!("{:.3}", r.value)).collect();
        println!("lr={lr} acc: {}", accs.join(" "));
        println!("      l_op: {}", lops.join(" "));
    }
}

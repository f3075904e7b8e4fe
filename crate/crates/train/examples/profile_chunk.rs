use std::time::Instant;
use progsup_autodiff::Tape;
use progsup_model::{Bound, DecoderConfig, ModelConfig, VlModel};
use progsup_synth::{build_manifest, gen_corpus, DataConfig, VisualMode};
use progsup_train::*;

fn main() {
    let data_cfg = DataConfig { n_samples: 64, ..DataConfig::default() };
    let samples = gen_corpus(1, &data_cfg, VisualMode::Oracle);
    let manifest = build_manifest(1, &data_cfg, VisualMode::Oracle, &samples);
    let vocab = Vocabulary::from_manifest(&manifest);
    let model_cfg = model_config_for(&manifest, &ModelConfig::desk());
    let dec_cfg = DecoderConfig { n_maxop: 9, n_op: manifest.op_labels.len() };
    let prepared = prepare_samples(&samples, &vocab, 9);
    let model = VlModel::new(model_cfg, dec_cfg, 23, 7);
    let w = LossWeights::default();
    let chunk: Vec<&PreparedSample> = prepared.iter().take(16).collect();

    for (name, flags) in [("full", LossFlags::all()), ("vqa-only", LossFlags::none())] {
        // forward only
        let t0 = Instant::now();
        let reps = 20;
        let mut nodes = 0;
        for _ in 0..reps {
            let mut tape = Tape::new();
            let mut bound = Bound::new(&mut tape, &model.params);
            let (_t, _) = batch_objective(&model, &mut bound, &chunk, &w, &flags);
            nodes = tape.len();
        }
        let fwd = t0.elapsed() / reps;
        // forward + backward
        let t1 = Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let mut bound = Bound::new(&mut tape, &model.params);
            let (t, _) = batch_objective(&model, &mut bound, &chunk, &w, &flags);
            bound.tape.backward(t);
            let _ = bound.take_grads(&model.params);
        }
        let both = t1.elapsed() / reps;
        println!("{name}: nodes {nodes} fwd {fwd:?} fwd+bwd {both:?} (16 samples)");
    }
}

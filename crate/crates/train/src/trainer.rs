//! Deterministic batched training.
//!
//! Batches fan out across workers in fixed-size index chunks; each chunk
//! accumulates its gradients locally and the chunk results are reduced in
//! chunk order, so the update is bit-identical for any worker count.

use progsup_autodiff::{AdamState, Tape, Tensor};
use progsup_model::{Bound, ParamId, VlModel};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::TrainConfig;
use crate::data::{with_donor_program, PreparedSample};
use crate::loss::{batch_objective, BatchStats};
use crate::schedule::lr_schedule;

/// Samples per parallel gradient task (one tape each). Fixed, not
/// worker-derived, so the reduction order never depends on the machine.
const GRAD_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss in stage {stage} at epoch {epoch}, step {step} (loss {loss})")]
    NonFinite { stage: String, epoch: usize, step: usize, loss: f64 },
}

/// One metrics row; serialized as CSV `stage,epoch,split,metric,value,seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("stage,epoch,split,metric,value,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.stage, r.epoch, r.split, r.metric, r.value, r.seed
        ));
    }
    out
}

pub struct TrainData<'a> {
    pub train: &'a [PreparedSample],
    pub val: &'a [PreparedSample],
}

pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    /// Parameter snapshot at the best validation epoch, in parameter order.
    pub best_params: Vec<Tensor>,
    pub final_train_acc: f64,
    pub steps: usize,
}

pub fn params_snapshot(model: &VlModel) -> Vec<Tensor> {
    model.params.iter().map(|(_, t)| (**t).clone()).collect()
}

pub fn restore_params(model: &mut VlModel, snapshot: &[Tensor]) {
    assert_eq!(snapshot.len(), model.params.len());
    for (i, t) in snapshot.iter().enumerate() {
        model.params.set_value(ParamId(i), t.clone());
    }
}

/// Copies every parameter whose name is not in `skip` from `src` to `dst`.
/// Panics on shape mismatch outside the skip list.
pub fn copy_params_except(src: &VlModel, dst: &mut VlModel, skip: &[&str]) {
    for (i, (name, value)) in src.params.iter().enumerate() {
        if skip.contains(&name) {
            continue;
        }
        let id = ParamId(i);
        debug_assert_eq!(dst.params.name(id), name);
        dst.params.set_value(id, (**value).clone());
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Gradients plus diagnostics for a fixed chunk of sample indices; the
/// whole chunk shares one tape.
fn chunk_pass(
    model: &VlModel,
    samples: &[PreparedSample],
    idx: &[usize],
    cfg: &TrainConfig,
) -> (Vec<Vec<f64>>, BatchStats) {
    let chunk: Vec<&PreparedSample> = idx.iter().map(|&i| &samples[i]).collect();
    let mut tape = Tape::new();
    let mut bound = Bound::new(&mut tape, &model.params);
    let (total, stats) = batch_objective(model, &mut bound, &chunk, &cfg.weights, &cfg.flags);
    bound.tape.backward(total);
    (bound.take_grads(&model.params), stats)
}

/// Answer accuracy and mean answer loss over a sample list. The decoder
/// is skipped: only the answer head matters here.
pub fn evaluate_answers(
    model: &VlModel,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let flags = crate::config::LossFlags::none();
    let chunks: Vec<&[PreparedSample]> = samples.chunks(GRAD_CHUNK).collect();
    let results = progsup_parallel::par_map(chunks.len(), |c| {
        let chunk: Vec<&PreparedSample> = chunks[c].iter().collect();
        let mut tape = Tape::new();
        let mut bound = Bound::new(&mut tape, &model.params);
        let (_, stats) = batch_objective(model, &mut bound, &chunk, &cfg.weights, &flags);
        stats
    });
    let mut correct = 0usize;
    let mut loss = 0.0;
    for stats in &results {
        correct += stats.correct;
        loss += stats.l_vqa;
    }
    (correct as f64 / samples.len() as f64, loss / samples.len() as f64)
}

/// Runs one training stage. The model is left at the final epoch's
/// parameters; the best-validation snapshot is returned in the outcome.
pub fn train_stage(
    model: &mut VlModel,
    data: &TrainData,
    cfg: &TrainConfig,
    stage_name: &str,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let n = data.train.len();
    assert!(n > 0, "empty training split");
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let param_sizes: Vec<usize> =
        model.params.iter().map(|(_, t)| t.numel()).collect();
    let mut adam = AdamState::new(&param_sizes);

    let mut log = Vec::new();
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = params_snapshot(model);
    let mut final_train_acc = 0.0;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ (epoch as u64) << 17));
        order.shuffle(&mut rng);

        // Sanity-check baseline: swap every program for another sample's,
        // re-drawn each epoch.
        let epoch_samples: Vec<PreparedSample> = if cfg.random_programs {
            let mut donors: Vec<usize> = (0..n).collect();
            donors.shuffle(&mut rng);
            progsup_parallel::par_map(n, |i| {
                with_donor_program(
                    &data.train[i],
                    &data.train[donors[i]].program,
                    model.decoder.config.n_maxop,
                )
            })
        } else {
            Vec::new()
        };
        let train_view: &[PreparedSample] =
            if cfg.random_programs { &epoch_samples } else { data.train };

        let mut epoch_loss = 0.0;
        let mut epoch_l_op = 0.0;
        let mut epoch_correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let lr = lr_schedule(step, total_steps, cfg.lr, cfg.warmup_fraction);
            let chunks: Vec<&[usize]> = batch.chunks(GRAD_CHUNK).collect();
            let results = progsup_parallel::par_map(chunks.len(), |c| {
                chunk_pass(model, train_view, chunks[c], cfg)
            });
            // fixed-order reduction
            let mut grads: Vec<Vec<f64>> = param_sizes.iter().map(|&s| vec![0.0; s]).collect();
            for (chunk_grads, stats) in &results {
                for (acc, g) in grads.iter_mut().zip(chunk_grads) {
                    for (a, x) in acc.iter_mut().zip(g) {
                        *a += *x;
                    }
                }
                epoch_loss += stats.total;
                epoch_l_op += stats.l_op;
                epoch_correct += stats.correct;
                if !stats.total.is_finite() {
                    return Err(TrainError::NonFinite {
                        stage: stage_name.to_string(),
                        epoch,
                        step,
                        loss: stats.total,
                    });
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grads.iter_mut() {
                for x in g.iter_mut() {
                    *x *= inv;
                }
            }
            if let Some(clip) = cfg.grad_clip {
                let norm: f64 =
                    grads.iter().flat_map(|g| g.iter().map(|x| x * x)).sum::<f64>().sqrt();
                if norm > clip {
                    let scale = clip / norm;
                    for g in grads.iter_mut() {
                        for x in g.iter_mut() {
                            *x *= scale;
                        }
                    }
                }
            }
            adam.begin_step();
            for (i, g) in grads.iter().enumerate() {
                adam.update_param(i, model.params.value_mut(ParamId(i)).data_mut(), g, lr);
            }
        }

        let train_loss = epoch_loss / n as f64;
        let train_acc = epoch_correct as f64 / n as f64;
        final_train_acc = train_acc;
        let (val_acc, val_loss) = evaluate_answers(model, data.val, cfg);
        for (split, metric, value) in [
            ("train", "loss", train_loss),
            ("train", "acc", train_acc),
            ("train", "l_op", epoch_l_op / n as f64),
            ("val", "loss", val_loss),
            ("val", "acc", val_acc),
        ] {
            log.push(LogRow {
                stage: stage_name.to_string(),
                epoch,
                split: split.to_string(),
                metric: metric.to_string(),
                value,
                seed: cfg.seed,
            });
        }
        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = epoch;
            best_params = params_snapshot(model);
        }
    }

    Ok(TrainOutcome {
        log,
        best_val_acc: best_val_acc.max(0.0),
        best_epoch,
        best_params,
        final_train_acc,
        steps: step,
    })
}

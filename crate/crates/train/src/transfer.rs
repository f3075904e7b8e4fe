//! Oracle transfer: pretrain on ground-truth one-hot visual inputs, then
//! fine-tune on detector-style features. The two settings differ in
//! feature width, so the visual input projection is re-initialized at the
//! hand-over; every other parameter carries across.

use progsup_model::{DecoderConfig, ModelConfig, VlModel};

use crate::config::TrainConfig;
use crate::trainer::{
    copy_params_except, restore_params, train_stage, LogRow, TrainData, TrainError, TrainOutcome,
};

/// Parameters that do not carry from the oracle model into the fine-tune
/// model (their shapes track the feature width).
pub const VISUAL_PROJECTION_PARAMS: [&str; 2] = ["enc.feat_proj.w", "enc.feat_proj.b"];

pub struct TransferOutcome {
    /// Fine-tuned model, restored to its best-validation parameters.
    pub model: VlModel,
    pub log: Vec<LogRow>,
    pub oracle: TrainOutcome,
    pub finetune: TrainOutcome,
}

/// Builds the stage-3 model: fresh initialization for the visual input
/// projection, oracle weights everywhere else.
pub fn finetune_model_from_oracle(
    oracle_model: &VlModel,
    noisy_config: &ModelConfig,
    decoder_config: &DecoderConfig,
    stop_index: usize,
    init_seed: u64,
) -> VlModel {
    let mut model =
        VlModel::new(noisy_config.clone(), decoder_config.clone(), stop_index, init_seed);
    copy_params_except(oracle_model, &mut model, &VISUAL_PROJECTION_PARAMS);
    model
}

/// Stage 1 (oracle pretraining on exact one-hot features) followed by
/// stage 3 (fine-tuning on noisy features); both stages carry whatever
/// program supervision the configs enable. Each stage hands over its
/// best-validation parameters.
#[allow(clippy::too_many_arguments)]
pub fn run_oracle_transfer(
    oracle_config: &ModelConfig,
    noisy_config: &ModelConfig,
    decoder_config: &DecoderConfig,
    stop_index: usize,
    oracle_data: &TrainData,
    noisy_data: &TrainData,
    oracle_train: &TrainConfig,
    finetune_train: &TrainConfig,
) -> Result<TransferOutcome, TrainError> {
    assert_eq!(
        oracle_config.d_hidden, noisy_config.d_hidden,
        "stages must agree on the hidden size"
    );
    let mut oracle_model = VlModel::new(
        oracle_config.clone(),
        decoder_config.clone(),
        stop_index,
        oracle_train.seed,
    );
    let oracle =
        train_stage(&mut oracle_model, oracle_data, oracle_train, "oracle_pretrain")?;
    restore_params(&mut oracle_model, &oracle.best_params);

    let mut model = finetune_model_from_oracle(
        &oracle_model,
        noisy_config,
        decoder_config,
        stop_index,
        finetune_train.seed,
    );
    let finetune = train_stage(&mut model, noisy_data, finetune_train, "finetune")?;
    restore_params(&mut model, &finetune.best_params);

    let mut log = oracle.log.clone();
    log.extend(finetune.log.clone());
    Ok(TransferOutcome { model, log, oracle, finetune })
}

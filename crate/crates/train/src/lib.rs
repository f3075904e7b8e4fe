//! Training orchestration: the weighted objective, learning-rate schedule,
//! deterministic batched training, checkpoint files, and oracle transfer.

mod checkpoint;
mod config;
mod data;
mod loss;
mod schedule;
mod trainer;
mod transfer;

pub use checkpoint::{
    apply_to_model, load_checkpoint, save_checkpoint, snapshot, Checkpoint, CheckpointError,
    FORMAT_VERSION, MAGIC,
};
pub use config::{LossFlags, LossWeights, Stage, TrainConfig};
pub use data::{model_config_for, prepare_samples, with_donor_program, PreparedSample, Vocabulary};
pub use loss::{batch_objective, batch_objective_parts, combine_losses, sample_objective, total_loss_value, BatchStats, SampleStats};
pub use schedule::lr_schedule;
pub use trainer::{
    copy_params_except, evaluate_answers, log_to_csv, params_snapshot, restore_params,
    train_stage, LogRow, TrainData, TrainError, TrainOutcome,
};
pub use transfer::{
    finetune_model_from_oracle, run_oracle_transfer, TransferOutcome, VISUAL_PROJECTION_PARAMS,
};

//! AdamW over the trainable set, the fine-tuning protocol, and MLM pretraining.

mod adamw;
mod aggregate;
mod finetune;
mod pretrain;
mod record;

pub use adamw::{adamw_step, AdamState, AdamWConfig};
pub use aggregate::{aggregate_seeds, Aggregate};
pub use finetune::{
    default_lr_grid, evaluate, train_once, train_task, train_task_per_seed, Evaluation, LrResult, Monitor, RunResult,
    SeedRun, TrainConfig, LARGE_LR_GRID, SMALL_LR_GRID,
};
pub use pretrain::{pretrain_mlm, PretrainConfig, PretrainReport};
pub use record::{run_records, RunMetrics, RunRecord};

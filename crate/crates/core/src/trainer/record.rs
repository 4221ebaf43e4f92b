use serde::{Deserialize, Serialize};

use super::finetune::RunResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub dev_accuracy: f64,
    pub train_accuracy: f64,
    pub dev_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub steps: usize,
    pub loss_curve: Vec<f64>,
    pub optimizer_coords: usize,
}

/// The per-run JSON record: one (task, selector, lr, seed) training job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub regime: String,
    pub selector: String,
    pub lr: f64,
    pub seed: u64,
    pub metrics: RunMetrics,
    /// Trainable share of the encoder.
    pub param_fraction: f64,
}

/// Flattens a sweep into records, ordered by learning rate then seed.
pub fn run_records(task: &str, regime: &str, result: &RunResult) -> Vec<RunRecord> {
    result
        .per_lr
        .iter()
        .flat_map(|lr| &lr.runs)
        .map(|r| RunRecord {
            task: task.to_string(),
            regime: regime.to_string(),
            selector: result.selector.clone(),
            lr: r.lr,
            seed: r.seed,
            metrics: RunMetrics {
                dev_accuracy: r.dev_metric,
                train_accuracy: r.train_metric,
                dev_loss: r.dev_loss,
                best_epoch: r.best_epoch,
                epochs_run: r.epochs_run,
                steps: r.steps,
                loss_curve: r.loss_curve.clone(),
                optimizer_coords: r.optimizer_coords,
            },
            param_fraction: result.param_count.encoder_fraction(),
        })
        .collect()
}

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamState, AdamWConfig};
use super::aggregate::{aggregate_seeds, Aggregate};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{attach_task_head, task_loss, Batch, HeadKind, ModelConfig, IGNORE_LABEL};
use crate::params::{count_params, ParamCount, ParameterStore, Selector, SelectorKind};
use crate::rng::RngStream;
use crate::tasks::{Example, TaskDataset};

/// Learning rates swept for full fine-tuning.
pub const SMALL_LR_GRID: [f64; 4] = [1e-5, 2e-5, 3e-5, 5e-5];
/// Learning rates swept for every partial regime.
pub const LARGE_LR_GRID: [f64; 4] = [1e-4, 4e-4, 7e-4, 1e-3];

/// The default grid for a selector: the small one for full fine-tuning,
/// the large one otherwise.
pub fn default_lr_grid(selector: &Selector) -> Vec<f64> {
    match selector.kind {
        SelectorKind::Full => SMALL_LR_GRID.to_vec(),
        _ => LARGE_LR_GRID.to_vec(),
    }
}

/// What early stopping and checkpoint selection watch on the dev split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// Highest dev accuracy; ties keep the earlier evaluation.
    DevMetric,
    /// Lowest dev cross-entropy.
    DevLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Empty means the selector's default grid.
    #[serde(default)]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub max_epochs: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_selector")]
    pub selector: Selector,
    /// Evaluate every this many steps; 0 means once per epoch.
    #[serde(default)]
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_monitor")]
    pub monitor: Monitor,
}

fn default_batch_size() -> usize {
    16
}
fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_selector() -> Selector {
    Selector::bitfit()
}
fn default_patience() -> usize {
    3
}
fn default_monitor() -> Monitor {
    Monitor::DevLoss
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rates: Vec::new(),
            batch_size: default_batch_size(),
            max_epochs: 20,
            seeds: default_seeds(),
            weight_decay: default_weight_decay(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            selector: default_selector(),
            eval_every: 0,
            patience: default_patience(),
            monitor: default_monitor(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("train.seeds must not be empty".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("train.max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("train.patience must be at least 1".into()));
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::Config("train.learning_rates must be positive".into()));
        }
        Ok(())
    }

    /// The learning rates actually swept.
    pub fn grid(&self) -> Vec<f64> {
        if self.learning_rates.is_empty() {
            default_lr_grid(&self.selector)
        } else {
            self.learning_rates.clone()
        }
    }

    pub fn adamw(&self, lr: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One (learning rate, seed) run. Metrics are taken at the evaluation the
/// monitor judged best.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub lr: f64,
    pub seed: u64,
    pub dev_metric: f64,
    pub train_metric: f64,
    pub dev_loss: f64,
    /// Epoch (1-based) of the selected evaluation.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub steps: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Coordinates tracked by the optimizer state.
    pub optimizer_coords: usize,
    /// Parameters at the selected evaluation.
    #[serde(skip)]
    pub final_params: Option<ParameterStore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrResult {
    pub lr: f64,
    pub dev: Aggregate,
    pub train: Aggregate,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub selector: String,
    pub param_count: ParamCount,
    pub best_lr: f64,
    /// Dev metric of the best learning rate across seeds.
    pub dev: Aggregate,
    pub train: Aggregate,
    pub per_lr: Vec<LrResult>,
}

impl RunResult {
    pub fn best(&self) -> &LrResult {
        self.per_lr
            .iter()
            .find(|r| r.lr == self.best_lr)
            .expect("best_lr is one of per_lr")
    }
}

/// Dev-split loss and accuracy in eval mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

const EVAL_BATCH: usize = 64;

fn make_batch(examples: &[&Example], seq_len: usize) -> Result<(Batch, Vec<usize>)> {
    let mut tokens = Vec::with_capacity(examples.len() * seq_len);
    let mut segments = Vec::with_capacity(examples.len() * seq_len);
    let mut labels = Vec::new();
    for ex in examples {
        tokens.extend_from_slice(&ex.tokens);
        segments.extend_from_slice(&ex.segments);
        labels.extend_from_slice(&ex.labels);
    }
    Ok((Batch::new(tokens, segments, seq_len)?, labels))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean loss and accuracy over `examples` (token-level for tagging).
pub fn evaluate(
    store: &ParameterStore,
    cfg: &ModelConfig,
    head: HeadKind,
    examples: &[Example],
    seq_len: usize,
) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("evaluation split is empty".into()));
    }
    let mut rng = RngStream::new(0, "eval");
    let (mut loss_sum, mut hits, mut count) = (0.0, 0usize, 0usize);
    let refs: Vec<&Example> = examples.iter().collect();
    for chunk in refs.chunks(EVAL_BATCH) {
        let (batch, labels) = make_batch(chunk, seq_len)?;
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let (loss, logits) =
            task_loss(&mut tape, &params, cfg, &batch, head, &labels, false, &mut rng)?;
        let logits = tape.value(logits);
        let scored: Vec<(usize, usize)> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != IGNORE_LABEL)
            .map(|(i, &l)| (i, l))
            .collect();
        for &(row, label) in &scored {
            hits += usize::from(argmax(logits.row(row)) == label);
        }
        loss_sum += tape.value(loss).item() * scored.len() as f64;
        count += scored.len();
    }
    Ok(Evaluation {
        loss: loss_sum / count as f64,
        accuracy: hits as f64 / count as f64,
    })
}

/// Trains one model from `encoder` with a fresh head, for one learning rate
/// and seed.
pub fn train_once(
    encoder: &ParameterStore,
    cfg: &ModelConfig,
    data: &TaskDataset,
    tc: &TrainConfig,
    lr: f64,
    seed: u64,
) -> Result<SeedRun> {
    if data.train.is_empty() || data.dev.is_empty() {
        return Err(Error::InvalidArgument("train and dev splits must be non-empty".into()));
    }
    let head = data.head();
    let mut store = attach_task_head(encoder, cfg, head, data.num_labels, seed)?;
    let trainable = tc.selector.resolve(&store.layout())?;
    store.apply_trainable(&trainable);
    let mut state = AdamState::new(&store, &trainable)?;
    let opt = tc.adamw(lr);

    let mut order_rng = RngStream::new(seed, "shuffle");
    let mut dropout_rng = RngStream::new(seed, "dropout");
    let n = data.train.len();

    let mut best: Option<(Evaluation, Evaluation, usize, ParameterStore)> = None;
    let mut since_best = 0usize;
    let mut loss_curve = Vec::new();
    let mut steps = 0usize;
    let mut epochs_run = 0usize;
    let mut stop = false;

    let mut eval_now = |store: &ParameterStore,
                        epoch: usize,
                        best: &mut Option<(Evaluation, Evaluation, usize, ParameterStore)>|
     -> Result<bool> {
        let dev = evaluate(store, cfg, head, &data.dev, data.seq_len)?;
        if !dev.accuracy.is_finite() || !dev.loss.is_finite() {
            return Err(Error::Divergence { lr, loss: dev.loss });
        }
        let improved = match best {
            None => true,
            Some((b, ..)) => match tc.monitor {
                Monitor::DevLoss => dev.loss < b.loss,
                Monitor::DevMetric => dev.accuracy > b.accuracy,
            },
        };
        if improved {
            let train = evaluate(store, cfg, head, &data.train, data.seq_len)?;
            *best = Some((dev, train, epoch, store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        Ok(since_best >= tc.patience)
    };

    for epoch in 1..=tc.max_epochs {
        epochs_run = epoch;
        let perm = order_rng.permutation(n);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in perm.chunks(tc.batch_size) {
            let examples: Vec<&Example> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (batch, labels) = make_batch(&examples, data.seq_len)?;
            let mut tape = Tape::new();
            let params = store.bind(&mut tape);
            let (loss, _) = task_loss(
                &mut tape,
                &params,
                cfg,
                &batch,
                head,
                &labels,
                true,
                &mut dropout_rng,
            )?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { lr, loss: value });
            }
            tape.backward(loss)?;
            let grads = params.gradients(&tape);
            adamw_step(&mut store, &grads, &mut state, &opt)?;
            epoch_loss += value;
            batches += 1;
            steps += 1;
            if tc.eval_every > 0 && steps % tc.eval_every == 0 && eval_now(&store, epoch, &mut best)? {
                stop = true;
                break;
            }
        }
        loss_curve.push(epoch_loss / batches as f64);
        if stop {
            break;
        }
        if tc.eval_every == 0 && eval_now(&store, epoch, &mut best)? {
            break;
        }
    }
    if best.is_none() {
        eval_now(&store, epochs_run, &mut best)?;
    }
    let (dev, train, best_epoch, params) = best.expect("evaluated at least once");
    Ok(SeedRun {
        lr,
        seed,
        dev_metric: dev.accuracy,
        train_metric: train.accuracy,
        dev_loss: dev.loss,
        best_epoch,
        epochs_run,
        steps,
        loss_curve,
        optimizer_coords: state.tracked_coords(),
        final_params: Some(params),
    })
}

/// Sweeps the learning-rate grid over all seeds, then keeps the learning
/// rate with the highest mean dev metric (ties go to the smaller rate).
pub fn train_task(
    encoder: &ParameterStore,
    cfg: &ModelConfig,
    data: &TaskDataset,
    tc: &TrainConfig,
) -> Result<RunResult> {
    train_task_per_seed(encoder, cfg, tc, |_| Ok(Cow::Borrowed(data)))
}

/// [`train_task`] where seed `s` trains on `data_for(s)`. The splits may
/// differ per seed but must share a task kind and label set.
pub fn train_task_per_seed<'a, F>(
    encoder: &ParameterStore,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    data_for: F,
) -> Result<RunResult>
where
    F: Fn(u64) -> Result<Cow<'a, TaskDataset>> + Sync,
{
    tc.validate()?;
    let mut grid = tc.grid();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let datasets: Vec<Cow<'a, TaskDataset>> =
        tc.seeds.iter().map(|&s| data_for(s)).collect::<Result<_>>()?;
    let (head, num_labels) = (datasets[0].head(), datasets[0].num_labels);
    if datasets.iter().any(|d| d.head() != head || d.num_labels != num_labels) {
        return Err(Error::InvalidArgument(
            "per-seed datasets disagree on task kind or label count".into(),
        ));
    }
    let jobs: Vec<(f64, usize)> = grid
        .iter()
        .flat_map(|&lr| (0..tc.seeds.len()).map(move |i| (lr, i)))
        .collect();
    let runs: Vec<SeedRun> = jobs
        .par_iter()
        .map(|&(lr, i)| train_once(encoder, cfg, &datasets[i], tc, lr, tc.seeds[i]))
        .collect::<Result<_>>()?;

    let mut per_lr = Vec::with_capacity(grid.len());
    for (i, &lr) in grid.iter().enumerate() {
        let chunk = runs[i * tc.seeds.len()..(i + 1) * tc.seeds.len()].to_vec();
        let dev = aggregate_seeds(&chunk.iter().map(|r| r.dev_metric).collect::<Vec<_>>())?;
        let train = aggregate_seeds(&chunk.iter().map(|r| r.train_metric).collect::<Vec<_>>())?;
        per_lr.push(LrResult {
            lr,
            dev,
            train,
            runs: chunk,
        });
    }
    let mut best = 0;
    for (i, r) in per_lr.iter().enumerate() {
        if r.dev.mean > per_lr[best].dev.mean {
            best = i;
        }
    }
    let layout = cfg
        .encoder_layout()
        .specs
        .into_iter()
        .chain(cfg.head_specs(head, num_labels))
        .collect();
    let param_count = count_params(&crate::params::Layout { specs: layout }, &tc.selector)?;
    Ok(RunResult {
        selector: tc.selector.to_string(),
        param_count,
        best_lr: per_lr[best].lr,
        dev: per_lr[best].dev,
        train: per_lr[best].train,
        per_lr,
    })
}

use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamState, AdamWConfig};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{mlm_objective, Batch, ModelConfig};
use crate::params::{ParameterStore, Selector};
use crate::rng::RngStream;
use crate::tasks::SyntheticCorpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-position masking probability (`[CLS]` is never masked).
    pub mask_prob: f64,
    pub seed: u64,
    /// Trailing corpus sentences held out for evaluation.
    pub heldout: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mask_prob: 0.15,
            seed: 0,
            heldout: 256,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be at least 1".into()));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return Err(Error::Config("pretrain.mask_prob must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("pretrain.learning_rate must be positive".into()));
        }
        if self.heldout == 0 {
            return Err(Error::Config("pretrain.heldout must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    /// Training loss of every step.
    pub step_losses: Vec<f64>,
    pub initial_heldout_loss: f64,
    pub final_heldout_loss: f64,
    pub initial_masked_accuracy: f64,
    pub final_masked_accuracy: f64,
    /// `1 / vocab_size`.
    pub chance_accuracy: f64,
}

impl PretrainReport {
    /// Loss of the last training step, if any step ran.
    pub fn final_train_loss(&self) -> Option<f64> {
        self.step_losses.last().copied()
    }
}

/// Positions to mask in a row of `seq_len` tokens: each non-first position
/// independently, with at least one per row.
fn mask_row(seq_len: usize, p: f64, rng: &mut RngStream) -> Vec<usize> {
    let mut out: Vec<usize> = (1..seq_len).filter(|_| rng.bernoulli(p)).collect();
    if out.is_empty() {
        out.push(1 + rng.below(seq_len - 1));
    }
    out
}

struct MaskedBatch {
    batch: Batch,
    positions: Vec<usize>,
}

fn masked_batch(sentences: &[&Vec<usize>], seq_len: usize, p: f64, rng: &mut RngStream) -> Result<MaskedBatch> {
    let mut tokens = Vec::with_capacity(sentences.len() * seq_len);
    let mut positions = Vec::new();
    for (row, s) in sentences.iter().enumerate() {
        tokens.extend_from_slice(s);
        positions.extend(mask_row(seq_len, p, rng).into_iter().map(|j| row * seq_len + j));
    }
    let segments = vec![0; tokens.len()];
    Ok(MaskedBatch {
        batch: Batch::new(tokens, segments, seq_len)?,
        positions,
    })
}

fn heldout_eval(store: &ParameterStore, cfg: &ModelConfig, held: &[MaskedBatch]) -> Result<(f64, f64)> {
    let mut rng = RngStream::new(0, "heldout-eval");
    let (mut loss_sum, mut hits, mut count) = (0.0, 0usize, 0usize);
    for mb in held {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let (loss, logits) = mlm_objective(&mut tape, &params, cfg, &mb.batch, &mb.positions, false, &mut rng)?;
        let logits = tape.value(logits);
        for (k, &pos) in mb.positions.iter().enumerate() {
            let row = logits.row(k);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            hits += usize::from(best == mb.batch.tokens[pos]);
        }
        loss_sum += tape.value(loss).item() * mb.positions.len() as f64;
        count += mb.positions.len();
    }
    Ok((loss_sum / count as f64, hits as f64 / count as f64))
}

/// Masked-LM pretraining of every parameter in `store` on `corpus`. The last
/// `heldout` sentences are never trained on and carry fixed masks.
pub fn pretrain_mlm(
    store: &mut ParameterStore,
    cfg: &ModelConfig,
    corpus: &SyntheticCorpus,
    pc: &PretrainConfig,
) -> Result<PretrainReport> {
    pc.validate()?;
    let seq_len = corpus.seq_len();
    if corpus.sentences.len() <= pc.heldout {
        return Err(Error::InvalidArgument(format!(
            "corpus of {} sentences leaves nothing to train on after holding out {}",
            corpus.sentences.len(),
            pc.heldout
        )));
    }
    if corpus.vocab_size() > cfg.vocab_size {
        return Err(Error::Config(format!(
            "corpus vocabulary ({}) exceeds model.vocab_size ({})",
            corpus.vocab_size(),
            cfg.vocab_size
        )));
    }
    let split = corpus.sentences.len() - pc.heldout;
    let (train, held) = corpus.sentences.split_at(split);

    let mut mask_rng = RngStream::new(pc.seed, "heldout-mask");
    let held_batches: Vec<MaskedBatch> = held
        .iter()
        .collect::<Vec<_>>()
        .chunks(64)
        .map(|c| masked_batch(c, seq_len, pc.mask_prob, &mut mask_rng))
        .collect::<Result<_>>()?;
    let (initial_loss, initial_acc) = heldout_eval(store, cfg, &held_batches)?;

    let trainable = Selector::full().resolve(&store.layout())?;
    store.apply_trainable(&trainable);
    let mut state = AdamState::new(store, &trainable)?;
    let opt = AdamWConfig {
        lr: pc.learning_rate,
        beta1: pc.beta1,
        beta2: pc.beta2,
        eps: pc.eps,
        weight_decay: pc.weight_decay,
    };
    let mut order_rng = RngStream::new(pc.seed, "pretrain-order");
    let mut train_mask_rng = RngStream::new(pc.seed, "pretrain-mask");
    let mut dropout_rng = RngStream::new(pc.seed, "pretrain-dropout");
    let mut perm = order_rng.permutation(train.len());
    let mut cursor = 0;
    let mut step_losses = Vec::with_capacity(pc.steps);
    for _ in 0..pc.steps {
        let mut rows = Vec::with_capacity(pc.batch_size);
        while rows.len() < pc.batch_size {
            if cursor == perm.len() {
                perm = order_rng.permutation(train.len());
                cursor = 0;
            }
            rows.push(&train[perm[cursor]]);
            cursor += 1;
        }
        let mb = masked_batch(&rows, seq_len, pc.mask_prob, &mut train_mask_rng)?;
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let (loss, _) = mlm_objective(&mut tape, &params, cfg, &mb.batch, &mb.positions, true, &mut dropout_rng)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence {
                lr: pc.learning_rate,
                loss: value,
            });
        }
        tape.backward(loss)?;
        adamw_step(store, &params.gradients(&tape), &mut state, &opt).map_err(|e| match e {
            Error::NonFiniteGradient { .. } => Error::Divergence {
                lr: pc.learning_rate,
                loss: value,
            },
            other => other,
        })?;
        step_losses.push(value);
    }
    let (final_loss, final_acc) = heldout_eval(store, cfg, &held_batches)?;
    Ok(PretrainReport {
        steps: pc.steps,
        step_losses,
        initial_heldout_loss: initial_loss,
        final_heldout_loss: final_loss,
        initial_masked_accuracy: initial_acc,
        final_masked_accuracy: final_acc,
        chance_accuracy: 1.0 / cfg.vocab_size as f64,
    })
}

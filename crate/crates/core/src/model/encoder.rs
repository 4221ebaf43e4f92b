//! Encoder forward pass and heads.
//!
//! Layer `l` maps its input `x` (`[batch * seq_len, hidden]`) to
//!
//! ```text
//! Q, K, V = W_q x + b_q,  W_k x + b_k,  W_v x + b_v      (per head column block)
//! h1  = att(Q, K, V)                                     (heads concatenated)
//! h2  = Dropout(W_m1 h1 + b_m1)
//! h3  = LN1(h2 + x)
//! h4  = GELU(W_m2 h3 + b_m2)
//! h5  = Dropout(W_m3 h4 + b_m3)
//! out = LN2(h5 + h3)
//! ```
//!
//! There is no separate attention output projection; `W_m1` plays that role.

use crate::autodiff::{RowStats, Tape, Var};
use crate::error::{Error, Result};
use crate::params::names::{self, BiasKind};
use crate::params::{Bindings, ParameterStore};
use crate::rng::RngStream;
use crate::tensor::Tensor;

use super::config::{HeadKind, ModelConfig};
use super::MASK_ID;

/// Fixed-length sequences packed row after row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    pub seq_len: usize,
}

impl Batch {
    pub fn single(tokens: &[usize]) -> Self {
        Self {
            tokens: tokens.to_vec(),
            segments: vec![0; tokens.len()],
            seq_len: tokens.len(),
        }
    }

    pub fn new(tokens: Vec<usize>, segments: Vec<usize>, seq_len: usize) -> Result<Self> {
        if seq_len == 0 || tokens.len() % seq_len != 0 || segments.len() != tokens.len() {
            return Err(Error::InvalidArgument(format!(
                "batch of {} tokens / {} segments is not a whole number of length-{seq_len} rows",
                tokens.len(),
                segments.len()
            )));
        }
        Ok(Self {
            tokens,
            segments,
            seq_len,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.tokens.len() / self.seq_len
    }

    /// Row index of every sequence's first position.
    pub fn cls_rows(&self) -> Vec<usize> {
        (0..self.batch_size()).map(|s| s * self.seq_len).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub h1: Tensor,
    pub h2: Tensor,
    pub h3: Tensor,
    pub h4: Tensor,
    pub h5: Tensor,
    pub out: Tensor,
    pub ln1: RowStats,
    pub ln2: RowStats,
}

/// Per-layer intermediates of one forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationTrace {
    pub embedding: Option<Tensor>,
    pub layers: Vec<LayerTrace>,
}

/// Records the encoder on `tape` and returns the final-layer representations.
pub fn forward(
    tape: &mut Tape,
    params: &Bindings,
    cfg: &ModelConfig,
    batch: &Batch,
    training: bool,
    rng: &mut RngStream,
    mut trace: Option<&mut ActivationTrace>,
) -> Result<Var> {
    if batch.seq_len > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: batch.seq_len,
            max: cfg.max_seq_len,
        });
    }
    if let Some(&t) = batch.tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Vocabulary {
            token: t,
            vocab_size: cfg.vocab_size,
        });
    }
    let p = cfg.dropout_p;
    let positions: Vec<usize> = (0..batch.tokens.len()).map(|i| i % batch.seq_len).collect();

    let word = tape.embedding(params.var(names::WORD_EMBEDDINGS)?, &batch.tokens)?;
    let pos = tape.embedding(params.var(names::POSITION_EMBEDDINGS)?, &positions)?;
    let seg = tape.embedding(params.var(names::TOKEN_TYPE_EMBEDDINGS)?, &batch.segments)?;
    let summed = tape.add(word, pos)?;
    let summed = tape.add(summed, seg)?;
    let x = tape.layer_norm(
        summed,
        params.var(names::EMBEDDING_LN_WEIGHT)?,
        params.var(names::EMBEDDING_LN_BIAS)?,
    )?;
    let mut x = tape.dropout(x, p, rng, training)?;
    if let Some(t) = trace.as_deref_mut() {
        t.embedding = Some(tape.value(x).clone());
        t.layers.clear();
    }

    for l in 0..cfg.num_layers {
        let w = |k: BiasKind| params.var(&k.weight_name(l));
        let b = |k: BiasKind| params.var(&k.bias_name(l));

        let q = tape.matmul_bias(x, w(BiasKind::Query)?, Some(b(BiasKind::Query)?))?;
        let k = tape.matmul_bias(x, w(BiasKind::Key)?, None)?;
        let v = tape.matmul_bias(x, w(BiasKind::Value)?, Some(b(BiasKind::Value)?))?;
        let h1 = tape.attention(
            q,
            k,
            v,
            Some(b(BiasKind::Key)?),
            cfg.num_heads,
            batch.seq_len,
        )?;

        let m1 = tape.matmul_bias(
            h1,
            w(BiasKind::AttentionOutput)?,
            Some(b(BiasKind::AttentionOutput)?),
        )?;
        let h2 = tape.dropout(m1, p, rng, training)?;
        let res1 = tape.add(h2, x)?;
        let h3 = tape.layer_norm(
            res1,
            w(BiasKind::AttentionLayerNorm)?,
            b(BiasKind::AttentionLayerNorm)?,
        )?;

        let m2 = tape.matmul_bias(h3, w(BiasKind::Intermediate)?, Some(b(BiasKind::Intermediate)?))?;
        let h4 = tape.gelu(m2);
        let m3 = tape.matmul_bias(h4, w(BiasKind::Output)?, Some(b(BiasKind::Output)?))?;
        let h5 = tape.dropout(m3, p, rng, training)?;
        let res2 = tape.add(h5, h3)?;
        let out = tape.layer_norm(
            res2,
            w(BiasKind::OutputLayerNorm)?,
            b(BiasKind::OutputLayerNorm)?,
        )?;

        if let Some(t) = trace.as_deref_mut() {
            t.layers.push(LayerTrace {
                h1: tape.value(h1).clone(),
                h2: tape.value(h2).clone(),
                h3: tape.value(h3).clone(),
                h4: tape.value(h4).clone(),
                h5: tape.value(h5).clone(),
                out: tape.value(out).clone(),
                ln1: tape.layer_norm_stats(h3).expect("layer norm node"),
                ln2: tape.layer_norm_stats(out).expect("layer norm node"),
            });
        }
        x = out;
    }
    Ok(x)
}

/// Head logits: one row per sequence for the classifier, one per position for
/// the tagger.
pub fn head_logits(
    tape: &mut Tape,
    params: &Bindings,
    reps: Var,
    batch: &Batch,
    head: HeadKind,
) -> Result<Var> {
    let w = params.var(head.weight_name())?;
    let b = params.var(head.bias_name())?;
    match head {
        HeadKind::Classifier => {
            let cls = tape.select_rows(reps, &batch.cls_rows())?;
            tape.matmul_bias(cls, w, Some(b))
        }
        HeadKind::Tagger => tape.matmul_bias(reps, w, Some(b)),
    }
}

/// Label used for positions the tagging loss skips (the `[CLS]` slot).
pub const IGNORE_LABEL: usize = usize::MAX;

/// Mean cross-entropy of a task head. Tagging labels equal to
/// [`IGNORE_LABEL`] are skipped. Returns `(loss, logits)`.
#[allow(clippy::too_many_arguments)]
pub fn task_loss(
    tape: &mut Tape,
    params: &Bindings,
    cfg: &ModelConfig,
    batch: &Batch,
    head: HeadKind,
    labels: &[usize],
    training: bool,
    rng: &mut RngStream,
) -> Result<(Var, Var)> {
    let reps = forward(tape, params, cfg, batch, training, rng, None)?;
    let logits = head_logits(tape, params, reps, batch, head)?;
    let loss = match head {
        HeadKind::Classifier => tape.cross_entropy(logits, labels)?,
        HeadKind::Tagger => {
            let (rows, kept): (Vec<usize>, Vec<usize>) = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l != IGNORE_LABEL)
                .map(|(i, &l)| (i, l))
                .unzip();
            let picked = tape.select_rows(logits, &rows)?;
            tape.cross_entropy(picked, &kept)?
        }
    };
    Ok((loss, logits))
}

/// Masked-LM objective: positions in `mask_positions` (flat indices into the
/// batch) are replaced by `[MASK]` and predicted through the vocabulary head.
pub fn mlm_objective(
    tape: &mut Tape,
    params: &Bindings,
    cfg: &ModelConfig,
    batch: &Batch,
    mask_positions: &[usize],
    training: bool,
    rng: &mut RngStream,
) -> Result<(Var, Var)> {
    if mask_positions.is_empty() {
        return Err(Error::InvalidArgument("mask set is empty".into()));
    }
    let mut masked = batch.clone();
    let mut targets = Vec::with_capacity(mask_positions.len());
    for &pos in mask_positions {
        let t = *masked
            .tokens
            .get(pos)
            .ok_or_else(|| Error::InvalidArgument(format!("mask position {pos} out of range")))?;
        targets.push(t);
        masked.tokens[pos] = MASK_ID;
    }
    let reps = forward(tape, params, cfg, &masked, training, rng, None)?;
    let picked = tape.select_rows(reps, mask_positions)?;
    let logits = tape.matmul_bias(
        picked,
        params.var(names::MLM_WEIGHT)?,
        Some(params.var(names::MLM_BIAS)?),
    )?;
    let loss = tape.cross_entropy(logits, &targets)?;
    Ok((loss, logits))
}

/// Final-layer representations `[n, hidden]` of one sequence, plus the trace
/// when requested.
pub fn encode(
    tokens: &[usize],
    store: &ParameterStore,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut RngStream,
    with_trace: bool,
) -> Result<(Tensor, Option<ActivationTrace>)> {
    let mut tape = Tape::new();
    let params = store.bind(&mut tape);
    let batch = Batch::single(tokens);
    let mut trace = with_trace.then(ActivationTrace::default);
    let reps = forward(&mut tape, &params, cfg, &batch, training, rng, trace.as_mut())?;
    Ok((tape.value(reps).clone(), trace))
}

fn linear(reps: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let r = tape.constant(reps.clone());
    let w = tape.constant(w.clone());
    let b = tape.constant(b.clone());
    let out = tape.matmul_bias(r, w, Some(b))?;
    Ok(tape.value(out).clone())
}

/// `head_w . reps[0] + head_b`.
pub fn classify_cls(reps: &Tensor, head_w: &Tensor, head_b: &Tensor) -> Result<Tensor> {
    let (_, h) = reps
        .matrix_dims()
        .ok_or_else(|| Error::shape("classify_cls", reps.shape(), &[0, 0]))?;
    let first = Tensor::new(vec![1, h], reps.row(0).to_vec())?;
    let out = linear(&first, head_w, head_b)?;
    Tensor::new(vec![out.len()], out.into_data())
}

/// Per-position logits `[n, num_tags]`.
pub fn tag_tokens(reps: &Tensor, head_w: &Tensor, head_b: &Tensor) -> Result<Tensor> {
    linear(reps, head_w, head_b)
}

/// Mean cross-entropy over `mask_positions` of one or more sequences of
/// length `seq_len`.
pub fn mlm_loss(
    tokens: &[usize],
    seq_len: usize,
    mask_positions: &[usize],
    store: &ParameterStore,
    cfg: &ModelConfig,
    rng: &mut RngStream,
    training: bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let params = store.bind(&mut tape);
    let batch = Batch::new(tokens.to_vec(), vec![0; tokens.len()], seq_len)?;
    let (loss, _) = mlm_objective(&mut tape, &params, cfg, &batch, mask_positions, training, rng)?;
    Ok(tape.value(loss).item())
}

//! Synthetic pretraining corpus and downstream tasks.
//!
//! Every task label is a function of the grammar's latent topics, and each
//! one depends on where tokens sit, not only on which tokens occur.
//!
//! * `single`: `[CLS] s` where the two halves of `s` are on different
//!   topics; the label is the topic `s` opens with. Token counts show both
//!   topics but not their order, so a bag-of-words model is capped near
//!   half accuracy.
//! * `pair`: `[CLS] s1 [SEP] s2` with segment ids 0 then 1; label 1 when the
//!   two sentences share a topic.
//! * `tagging`: `[CLS] s`, one tag per position naming the topic of the half
//!   the token sits in. Determiners and fillers are tagged too, so the
//!   answer has to come from context.

mod baseline;
mod grammar;
mod io;

pub use baseline::{bag_of_words_accuracy, BagOfWords};
pub use grammar::{GrammarParams, TokenRole};
pub use io::{read_jsonl, write_jsonl};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HeadKind, CLS_ID, IGNORE_LABEL, SEP_ID};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Single,
    Pair,
    Tagging,
}

impl TaskKind {
    pub fn head(self) -> HeadKind {
        match self {
            TaskKind::Tagging => HeadKind::Tagger,
            _ => HeadKind::Classifier,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Single => "single",
            TaskKind::Pair => "pair",
            TaskKind::Tagging => "tagging",
        }
    }
}

/// Unlabeled pretraining text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub grammar: GrammarParams,
    /// Each entry starts with `[CLS]`.
    pub sentences: Vec<Vec<usize>>,
    pub seed: u64,
}

impl SyntheticCorpus {
    pub fn seq_len(&self) -> usize {
        self.grammar.sentence_len + 1
    }

    pub fn vocab_size(&self) -> usize {
        self.grammar.vocab_size()
    }
}

/// Draws `size` sentences; each switches topic at its midpoint with
/// probability `switch_prob`.
pub fn gen_corpus(grammar: &GrammarParams, size: usize, seed: u64) -> Result<SyntheticCorpus> {
    grammar.validate()?;
    if size == 0 {
        return Err(Error::InvalidArgument("corpus size must be at least 1".into()));
    }
    let mut rng = RngStream::new(seed, "corpus");
    let sentences = (0..size)
        .map(|_| {
            let a = rng.below(grammar.num_topics);
            let b = if rng.bernoulli(grammar.switch_prob) {
                grammar.other_topic(a, &mut rng)
            } else {
                a
            };
            let mut s = vec![CLS_ID];
            s.extend(grammar.gen_sentence(a, b, grammar.sentence_len, &mut rng));
            s
        })
        .collect();
    Ok(SyntheticCorpus {
        grammar: grammar.clone(),
        sentences,
        seed,
    })
}

/// One fixed-length example. `labels` holds one class for sentence-level
/// tasks and one tag per position (with [`IGNORE_LABEL`] at `[CLS]`) for
/// tagging.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub kind: TaskKind,
    pub grammar: GrammarParams,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub num_labels: usize,
    pub seq_len: usize,
    pub seed: u64,
}

impl TaskDataset {
    pub fn head(&self) -> HeadKind {
        self.kind.head()
    }
}

fn single_example(g: &GrammarParams, topic: usize, rng: &mut RngStream) -> Example {
    let second = g.other_topic(topic, rng);
    let mut tokens = vec![CLS_ID];
    tokens.extend(g.gen_sentence(topic, second, g.sentence_len, rng));
    Example {
        segments: vec![0; tokens.len()],
        tokens,
        labels: vec![topic],
    }
}

fn pair_lengths(g: &GrammarParams) -> (usize, usize) {
    // [CLS] s1 [SEP] s2 has the same total length as a single-task input.
    let body = g.sentence_len - 1;
    let first = body / 2;
    (first, body - first)
}

fn pair_example(g: &GrammarParams, label: usize, rng: &mut RngStream) -> Example {
    let (n1, n2) = pair_lengths(g);
    let a = rng.below(g.num_topics);
    let b = if label == 1 { a } else { g.other_topic(a, rng) };
    let mut tokens = vec![CLS_ID];
    tokens.extend(g.gen_half(a, n1, rng));
    tokens.push(SEP_ID);
    let mut segments = vec![0; tokens.len()];
    tokens.extend(g.gen_half(b, n2, rng));
    segments.resize(tokens.len(), 1);
    Example {
        tokens,
        segments,
        labels: vec![label],
    }
}

/// Topics of the two halves cycle with `i` so tag counts stay balanced:
/// every ordered pair `(a, b)` with `a != b` appears once per cycle, as
/// do the same number of unswitched sentences.
fn tagging_example(g: &GrammarParams, i: usize, rng: &mut RngStream) -> Example {
    let t = g.num_topics;
    let cycle = 2 * t * (t - 1);
    let k = i % cycle;
    let a = k % t;
    let b = if k < t * (t - 1) { a } else { (a + 1 + (k - t * (t - 1)) / t) % t };
    let cut = GrammarParams::split_point(g.sentence_len);
    let mut tokens = vec![CLS_ID];
    tokens.extend(g.gen_sentence(a, b, g.sentence_len, rng));
    let mut labels = vec![IGNORE_LABEL];
    labels.extend((0..g.sentence_len).map(|i| if i < cut { a } else { b }));
    Example {
        segments: vec![0; tokens.len()],
        tokens,
        labels,
    }
}

/// Recomputes an example's labels from its tokens using the generating rule
/// (noun topics of each half).
pub fn rule_labels(kind: TaskKind, g: &GrammarParams, tokens: &[usize]) -> Option<Vec<usize>> {
    match kind {
        TaskKind::Single => {
            let body = &tokens[1..];
            let cut = GrammarParams::split_point(body.len());
            let a = g.topic_of(&body[..cut])?;
            let b = g.topic_of(&body[cut..])?;
            (a != b).then(|| vec![a])
        }
        TaskKind::Pair => {
            let sep = tokens.iter().position(|&t| t == SEP_ID)?;
            let a = g.topic_of(&tokens[1..sep])?;
            let b = g.topic_of(&tokens[sep + 1..])?;
            Some(vec![usize::from(a == b)])
        }
        TaskKind::Tagging => {
            let body = &tokens[1..];
            let cut = GrammarParams::split_point(body.len());
            let a = g.topic_of(&body[..cut])?;
            let b = g.topic_of(&body[cut..])?;
            let mut labels = vec![IGNORE_LABEL];
            labels.extend((0..body.len()).map(|i| if i < cut { a } else { b }));
            Some(labels)
        }
    }
}

/// Generates a task with `n_train` training and `n_dev` development
/// examples. Sentence-level classes cycle so both splits are balanced to
/// within one example per class; dev examples that duplicate a training example
/// are redrawn.
pub fn gen_task(
    grammar: &GrammarParams,
    kind: TaskKind,
    n_train: usize,
    n_dev: usize,
    seed: u64,
) -> Result<TaskDataset> {
    grammar.validate()?;
    if n_train == 0 {
        return Err(Error::InvalidArgument("task needs at least one training example".into()));
    }
    if n_dev == 0 {
        return Err(Error::InvalidArgument("task needs at least one dev example".into()));
    }
    let mut rng = RngStream::new(seed, format!("task-{}", kind.as_str()));
    let draw = |i: usize, rng: &mut RngStream| match kind {
        TaskKind::Single => single_example(grammar, i % grammar.num_topics, rng),
        TaskKind::Pair => pair_example(grammar, i % 2, rng),
        TaskKind::Tagging => tagging_example(grammar, i, rng),
    };
    let train: Vec<Example> = (0..n_train).map(|i| draw(i, &mut rng)).collect();
    let seen: std::collections::HashSet<&Example> = train.iter().collect();
    let mut dev = Vec::with_capacity(n_dev);
    let mut attempts = 0usize;
    while dev.len() < n_dev {
        let ex = draw(dev.len(), &mut rng);
        attempts += 1;
        if attempts > 1000 * (n_dev + 1) {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {n_dev} dev examples disjoint from training data"
            )));
        }
        if !seen.contains(&ex) {
            dev.push(ex);
        }
    }
    let mut train = train;
    // Cycled labels are convenient for balance but should not leak
    // through example order.
    rng.shuffle(&mut train);
    rng.shuffle(&mut dev);
    let num_labels = match kind {
        TaskKind::Pair => 2,
        _ => grammar.num_topics,
    };
    Ok(TaskDataset {
        kind,
        grammar: grammar.clone(),
        train,
        dev,
        num_labels,
        seq_len: grammar.sentence_len + 1,
        seed,
    })
}

/// Indices of the first `size` training examples under a seed-dependent
/// permutation, so smaller subsets are prefixes of larger ones.
pub fn subset_indices(n_train: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > n_train {
        return Err(Error::InvalidArgument(format!(
            "subset of {size} requested from {n_train} training examples"
        )));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("subset size must be at least 1".into()));
    }
    let mut perm = RngStream::new(seed, "subset").permutation(n_train);
    perm.truncate(size);
    Ok(perm)
}

/// A copy of `dataset` whose training split is the nested subset of
/// `size` examples for `seed`. `size == n_train` returns the split unchanged.
pub fn subset(dataset: &TaskDataset, size: usize, seed: u64) -> Result<TaskDataset> {
    let n = dataset.train.len();
    let mut out = dataset.clone();
    if size == n {
        return Ok(out);
    }
    let idx = subset_indices(n, size, seed)?;
    out.train = idx.iter().map(|&i| dataset.train[i].clone()).collect();
    Ok(out)
}

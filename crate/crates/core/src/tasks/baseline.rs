//! Linear bag-of-words baseline.
//!
//! Sentence-level tasks use token counts over the whole input; tagging uses
//! the one-hot identity of the token being tagged. Softmax regression trained
//! by full-batch gradient descent with a small L2 penalty.

use super::{Example, TaskDataset, TaskKind};
use crate::model::IGNORE_LABEL;

#[derive(Debug, Clone)]
pub struct BagOfWords {
    vocab: usize,
    classes: usize,
    /// `[classes, vocab + 1]`; the last column is the intercept.
    weights: Vec<f64>,
}

fn features(kind: TaskKind, vocab: usize, ex: &Example) -> Vec<(Vec<f64>, usize)> {
    match kind {
        TaskKind::Tagging => ex
            .tokens
            .iter()
            .zip(&ex.labels)
            .filter(|(_, &l)| l != IGNORE_LABEL)
            .map(|(&t, &l)| {
                let mut f = vec![0.0; vocab];
                f[t] = 1.0;
                (f, l)
            })
            .collect(),
        _ => {
            let mut f = vec![0.0; vocab];
            for &t in &ex.tokens {
                f[t] += 1.0;
            }
            vec![(f, ex.labels[0])]
        }
    }
}

impl BagOfWords {
    fn logits(&self, f: &[f64]) -> Vec<f64> {
        let stride = self.vocab + 1;
        (0..self.classes)
            .map(|c| {
                let row = &self.weights[c * stride..(c + 1) * stride];
                row[..self.vocab].iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + row[self.vocab]
            })
            .collect()
    }

    pub fn fit(data: &TaskDataset, epochs: usize, lr: f64, l2: f64) -> Self {
        let vocab = data.grammar.vocab_size();
        let classes = data.num_labels;
        let stride = vocab + 1;
        let rows: Vec<_> = data
            .train
            .iter()
            .flat_map(|ex| features(data.kind, vocab, ex))
            .collect();
        let mut model = Self {
            vocab,
            classes,
            weights: vec![0.0; classes * stride],
        };
        let n = rows.len().max(1) as f64;
        for _ in 0..epochs {
            let mut grad = vec![0.0; model.weights.len()];
            for (f, y) in &rows {
                let z = model.logits(f);
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                for c in 0..classes {
                    let d = e[c] / s - if c == *y { 1.0 } else { 0.0 };
                    let g = &mut grad[c * stride..(c + 1) * stride];
                    for (gi, xi) in g[..vocab].iter_mut().zip(f) {
                        *gi += d * xi;
                    }
                    g[vocab] += d;
                }
            }
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= lr * (g / n + l2 * *w);
            }
        }
        model
    }

    pub fn accuracy(&self, kind: TaskKind, examples: &[Example]) -> f64 {
        let mut hit = 0usize;
        let mut total = 0usize;
        for ex in examples {
            for (f, y) in features(kind, self.vocab, ex) {
                let z = self.logits(&f);
                let pred = (0..self.classes)
                    .max_by(|&a, &b| z[a].total_cmp(&z[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                hit += usize::from(pred == y);
                total += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Dev accuracy of a bag-of-words model fit on the training split.
pub fn bag_of_words_accuracy(data: &TaskDataset) -> f64 {
    BagOfWords::fit(data, 300, 0.5, 1e-4).accuracy(data.kind, &data.dev)
}

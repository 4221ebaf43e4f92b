use std::borrow::Cow;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::svg::{line_chart_log_x, Series};
use super::table::{fmt_f64, parse_f64, CsvTable};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::{ParameterStore, Regime};
use crate::tasks::{subset, TaskDataset};
use crate::trainer::{train_task_per_seed, Aggregate, RunResult, TrainConfig};

pub const SWEEP_SCHEMA: &str = "size_sweep";
pub const SWEEP_VERSION: u32 = 1;
/// Fewest seeds a sweep point may average over.
pub const MIN_SWEEP_SEEDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub train_size: usize,
    pub method: String,
    pub best_lr: f64,
    pub dev: Aggregate,
    pub train: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Grouped by method, sizes increasing within each method.
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn series(&self, method: &str) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.method == method).collect()
    }

    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.points {
            if !out.contains(&p.method.as_str()) {
                out.push(&p.method);
            }
        }
        out
    }

    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(
            SWEEP_SCHEMA,
            SWEEP_VERSION,
            &["method", "train_size", "best_lr", "dev_mean", "dev_std", "train_mean", "train_std", "seeds"],
        );
        for p in &self.points {
            t.push(vec![
                p.method.clone(),
                p.train_size.to_string(),
                fmt_f64(p.best_lr),
                fmt_f64(p.dev.mean),
                fmt_f64(p.dev.std),
                fmt_f64(p.train.mean),
                fmt_f64(p.train.std),
                p.dev.n.to_string(),
            ]);
        }
        t
    }

    pub fn from_table(t: &CsvTable, origin: &Path) -> Result<Self> {
        t.expect_schema(SWEEP_SCHEMA, SWEEP_VERSION, origin)?;
        let bad = |reason: String| Error::Format {
            path: origin.to_path_buf(),
            reason,
        };
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("`{s}` is not an integer")));
        let agg = |mean: &str, std: &str, n: usize| -> Result<Aggregate> {
            Ok(Aggregate {
                mean: parse_f64(mean, origin)?,
                std: parse_f64(std, origin)?,
                n,
                single_seed: n == 1,
            })
        };
        let points = t
            .rows
            .iter()
            .map(|r| {
                let n = int(&r[7])?;
                Ok(SweepPoint {
                    method: r[0].clone(),
                    train_size: int(&r[1])?,
                    best_lr: parse_f64(&r[2], origin)?,
                    dev: agg(&r[3], &r[4], n)?,
                    train: agg(&r[5], &r[6], n)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { points })
    }

    pub fn to_svg(&self, title: &str) -> String {
        let series: Vec<Series> = self
            .methods()
            .into_iter()
            .map(|m| Series {
                label: m.to_string(),
                points: self
                    .series(m)
                    .iter()
                    .map(|p| (p.train_size as f64, p.dev.mean, p.dev.std))
                    .collect(),
            })
            .collect();
        line_chart_log_x(title, "training examples", "dev accuracy", &series)
    }
}

/// Trains every method on nested subsets of `data`'s training split. Seed
/// `s` uses the subset drawn with seed `s` at every size, so within a seed
/// smaller subsets are contained in larger ones. Learning rates follow
/// `tc.learning_rates`, or each method's default grid when that is empty.
///
/// Returns the assembled curve and the underlying runs, keyed by
/// `(method, size)`.
pub fn size_sweep(
    encoder: &ParameterStore,
    cfg: &ModelConfig,
    data: &TaskDataset,
    sizes: &[usize],
    methods: &[Regime],
    tc: &TrainConfig,
) -> Result<(SweepResult, Vec<(String, usize, RunResult)>)> {
    if sizes.is_empty() || methods.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one size and one method".into()));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("sweep sizes must strictly increase: {sizes:?}")));
    }
    let n = data.train.len();
    if let Some(&s) = sizes.iter().find(|&&s| s == 0 || s > n) {
        return Err(Error::InvalidArgument(format!(
            "sweep size {s} outside 1..={n} training examples"
        )));
    }
    if tc.seeds.len() < MIN_SWEEP_SEEDS {
        return Err(Error::InvalidArgument(format!(
            "sweep points need at least {MIN_SWEEP_SEEDS} seeds, got {}",
            tc.seeds.len()
        )));
    }
    let mut points = Vec::new();
    let mut runs = Vec::new();
    for m in methods {
        let mtc = TrainConfig {
            selector: m.selector.clone(),
            ..tc.clone()
        };
        for &size in sizes {
            let r = train_task_per_seed(encoder, cfg, &mtc, |seed| {
                subset(data, size, seed).map(Cow::Owned)
            })?;
            points.push(SweepPoint {
                train_size: size,
                method: m.id.clone(),
                best_lr: r.best_lr,
                dev: r.dev,
                train: r.train,
            });
            runs.push((m.id.clone(), size, r));
        }
    }
    Ok((SweepResult { points }, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agg(mean: f64) -> Aggregate {
        Aggregate {
            mean,
            std: 0.25,
            n: 3,
            single_seed: false,
        }
    }

    #[test]
    fn table_round_trip() {
        let r = SweepResult {
            points: vec![
                SweepPoint {
                    train_size: 25,
                    method: "bitfit".into(),
                    best_lr: 1e-3,
                    dev: agg(0.6),
                    train: agg(0.9),
                },
                SweepPoint {
                    train_size: 50,
                    method: "full".into(),
                    best_lr: 5e-5,
                    dev: agg(0.7),
                    train: agg(1.0),
                },
            ],
        };
        let t = r.to_table();
        let back = SweepResult::from_table(&t, Path::new("t")).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.methods(), vec!["bitfit", "full"]);
        roxmltree::Document::parse(&r.to_svg("sweep")).unwrap();
    }
}

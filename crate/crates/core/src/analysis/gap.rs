use serde::{Deserialize, Serialize};

use super::table::{fmt_f64, CsvTable};
use crate::error::{Error, Result};
use crate::trainer::{aggregate_seeds, Aggregate, RunRecord, RunResult};

pub const GAP_SCHEMA: &str = "generalization_gap";
pub const GAP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedGap {
    pub seed: u64,
    pub train: f64,
    pub dev: f64,
    pub gap: f64,
}

/// Train minus dev accuracy per seed, at one learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub lr: f64,
    pub per_seed: Vec<SeedGap>,
    pub gap: Aggregate,
}

fn report(lr: f64, pairs: impl Iterator<Item = (u64, f64, f64)>) -> Result<GapReport> {
    let mut per_seed = Vec::new();
    for (seed, train, dev) in pairs {
        if !train.is_finite() {
            return Err(Error::InvalidArgument(format!("seed {seed} has no train metric")));
        }
        if !dev.is_finite() {
            return Err(Error::InvalidArgument(format!("seed {seed} has no dev metric")));
        }
        per_seed.push(SeedGap {
            seed,
            train,
            dev,
            gap: train - dev,
        });
    }
    let gap = aggregate_seeds(&per_seed.iter().map(|s| s.gap).collect::<Vec<_>>())?;
    Ok(GapReport { lr, per_seed, gap })
}

/// Gap of the runs at the selected learning rate.
pub fn generalization_gap(run: &RunResult) -> Result<GapReport> {
    let best = run.best();
    report(
        best.lr,
        best.runs.iter().map(|r| (r.seed, r.train_metric, r.dev_metric)),
    )
}

/// Gap recomputed from per-run records at learning rate `lr`.
pub fn gap_from_records(records: &[RunRecord], lr: f64) -> Result<GapReport> {
    report(
        lr,
        records
            .iter()
            .filter(|r| r.lr == lr)
            .map(|r| (r.seed, r.metrics.train_accuracy, r.metrics.dev_accuracy)),
    )
}

/// One row per regime: `regime, lr, mean_gap, std_gap, seeds`.
pub fn gap_table(rows: &[(String, GapReport)]) -> CsvTable {
    let mut t = CsvTable::new(GAP_SCHEMA, GAP_VERSION, &["regime", "lr", "mean_gap", "std_gap", "seeds"]);
    for (regime, g) in rows {
        t.push(vec![
            regime.clone(),
            fmt_f64(g.lr),
            fmt_f64(g.gap.mean),
            fmt_f64(g.gap.std),
            g.gap.n.to_string(),
        ]);
    }
    t
}

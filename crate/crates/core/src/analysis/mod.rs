//! Measurements over finished runs: bias-change matrices, parameter
//! fractions, generalization gaps, and training-set-size sweeps, plus the
//! CSV and SVG files they are written to.

mod bias_change;
mod fractions;
mod gap;
pub mod svg;
mod sweep;
pub mod table;

pub use bias_change::{
    bias_change, heatmap_export, mean_abs_change, mean_bias_change, BiasChangeReport, TensorLookup,
    BIAS_CHANGE_SCHEMA, BIAS_CHANGE_VERSION,
};
pub use fractions::{fraction_table, param_fraction_report, FractionRow, FRACTION_SCHEMA};
pub use gap::{gap_from_records, gap_table, generalization_gap, GapReport, SeedGap, GAP_SCHEMA};
pub use sweep::{size_sweep, SweepPoint, SweepResult, MIN_SWEEP_SEEDS, SWEEP_SCHEMA};
pub use table::{fmt_f64, CsvTable};

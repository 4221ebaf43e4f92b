use serde::{Deserialize, Serialize};

use super::table::{fmt_f64, CsvTable};
use crate::error::Result;
use crate::model::{HeadKind, ModelConfig};
use crate::params::{count_params, ParamCount, Regime};

pub const FRACTION_SCHEMA: &str = "param_fraction";
pub const FRACTION_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionRow {
    pub config: String,
    pub regime: String,
    pub selector: String,
    pub count: ParamCount,
}

impl FractionRow {
    /// The `%Param` cell: trainable encoder share, two decimals.
    pub fn percent_label(&self) -> String {
        format!("{:.2}%", self.count.encoder_percent())
    }
}

/// Trainable-parameter counts for every (config, regime) pair, each config
/// carrying a classification head.
pub fn param_fraction_report(configs: &[(&str, ModelConfig)], regimes: &[Regime]) -> Result<Vec<FractionRow>> {
    let mut rows = Vec::new();
    for (name, cfg) in configs {
        cfg.validate()?;
        let layout = cfg.finetune_layout(HeadKind::Classifier);
        for r in regimes {
            rows.push(FractionRow {
                config: name.to_string(),
                regime: r.id.clone(),
                selector: r.selector.to_string(),
                count: count_params(&layout, &r.selector)?,
            });
        }
    }
    Ok(rows)
}

pub fn fraction_table(rows: &[FractionRow]) -> CsvTable {
    let mut t = CsvTable::new(
        FRACTION_SCHEMA,
        FRACTION_VERSION,
        &[
            "config",
            "regime",
            "selector",
            "encoder_trainable",
            "encoder_total",
            "head",
            "encoder_fraction",
            "percent",
        ],
    );
    for r in rows {
        t.push(vec![
            r.config.clone(),
            r.regime.clone(),
            r.selector.clone(),
            r.count.encoder_trainable.to_string(),
            r.count.encoder_total.to_string(),
            r.count.head_count.to_string(),
            fmt_f64(r.count.encoder_fraction()),
            r.percent_label(),
        ]);
    }
    t
}

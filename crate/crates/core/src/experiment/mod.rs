//! Declarative experiments: a TOML config drives pretraining, fine-tuning
//! every regime, and the analysis outputs.
//!
//! Output layout under the chosen directory:
//!
//! ```text
//! config.toml                      resolved config (input to `analyze`)
//! metadata.json                    timestamps; the only non-deterministic file
//! checkpoints/pretrained/          encoder + MLM head after pretraining
//! checkpoints/<task>__<regime>/seed_<s>/   fine-tuned bias vectors
//! runs/pretrain.json               pretraining log
//! runs/<task>__<regime>.json       aggregate result plus one record per (lr, seed)
//! runs/sweep.json                  size-sweep curve and records
//! tables/*.csv                     schema-versioned tables
//! figures/*.svg                    heatmaps and the sweep curve
//! ```

mod config;
mod pipeline;

pub use config::{
    default_regimes, resolve_regime, ExperimentConfig, PretrainSection, SweepSpec, TaskSpec,
};
pub use pipeline::{
    check_compatible, cmd_analyze, exit_code, cmd_finetune, cmd_pretrain, cmd_run, load_encoder, task_data,
    write_metadata, AnalyzeSummary, FinetuneSummary, OutputDir, PretrainLog, RegimeRun, SweepLog,
    SweepRunLog, CONFIG_FILE, METADATA_FILE, SUMMARY_SCHEMA,
};

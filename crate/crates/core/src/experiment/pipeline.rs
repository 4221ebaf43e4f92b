use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{resolve_regime, ExperimentConfig, TaskSpec};
use crate::analysis::{
    bias_change, fmt_f64, fraction_table, gap_from_records, gap_table, generalization_gap,
    heatmap_export, mean_bias_change, param_fraction_report, size_sweep, BiasChangeReport,
    CsvTable, GapReport, SweepResult,
};
use crate::error::{Error, Result};
use crate::model::{init_pretraining_store, ModelConfig};
use crate::params::{load_checkpoint, names, save_checkpoint, ParameterStore, Regime};
use crate::tasks::{gen_corpus, gen_task, subset, TaskDataset};
use crate::trainer::{pretrain_mlm, run_records, PretrainReport, RunRecord, RunResult, TrainConfig};

pub const SUMMARY_SCHEMA: &str = "regime_summary";
/// The only output file allowed to differ between identical runs.
pub const METADATA_FILE: &str = "metadata.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Paths of every artifact under an output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn pretrained(&self) -> PathBuf {
        self.root.join("checkpoints").join("pretrained")
    }

    pub fn pretrain_log(&self) -> PathBuf {
        self.root.join("runs").join("pretrain.json")
    }

    pub fn run_file(&self, task: &str, regime: &str) -> PathBuf {
        self.root.join("runs").join(format!("{task}__{}.json", file_safe(regime)))
    }

    /// Bias vectors of one fine-tuned model at the selected learning rate.
    pub fn bias_checkpoint(&self, task: &str, regime: &str, seed: u64) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("{task}__{}", file_safe(regime)))
            .join(format!("seed_{seed}"))
    }

    pub fn sweep_file(&self) -> PathBuf {
        self.root.join("runs").join("sweep.json")
    }

    pub fn table(&self, name: &str) -> PathBuf {
        self.root.join("tables").join(format!("{name}.csv"))
    }

    pub fn figure(&self, name: &str) -> PathBuf {
        self.root.join("figures").join(format!("{name}.svg"))
    }
}

/// Regime ids may be selector strings; keep file names portable.
fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_config(cfg: &ExperimentConfig, out: &OutputDir) -> Result<()> {
    fs::create_dir_all(&out.root).map_err(|e| Error::io(&out.root, e))?;
    let path = out.config();
    fs::write(&path, cfg.to_toml_string()?).map_err(|e| Error::io(&path, e))
}

/// Pretraining log as written to `runs/pretrain.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub corpus_size: usize,
    pub vocab_size: usize,
    pub report: PretrainReport,
}

/// Generates the corpus, pretrains from a fresh initialization, and saves
/// `checkpoints/pretrained` plus the log.
pub fn cmd_pretrain(cfg: &ExperimentConfig, out: &OutputDir) -> Result<PretrainReport> {
    cfg.validate()?;
    write_config(cfg, out)?;
    let corpus = gen_corpus(&cfg.grammar, cfg.pretrain.corpus_size, cfg.pretrain.corpus_seed)?;
    let mut store = init_pretraining_store(&cfg.model, cfg.pretrain.init_seed)?;
    let report = pretrain_mlm(&mut store, &cfg.model, &corpus, &cfg.pretrain.mlm)?;
    save_checkpoint(&store, &out.pretrained())?;
    write_json(
        &out.pretrain_log(),
        &PretrainLog {
            corpus_size: corpus.sentences.len(),
            vocab_size: corpus.vocab_size(),
            report: report.clone(),
        },
    )?;
    Ok(report)
}

/// Checks that every encoder parameter the model needs is present with the
/// right shape.
pub fn check_compatible(store: &ParameterStore, model: &ModelConfig, origin: &Path) -> Result<()> {
    for spec in model.encoder_layout().specs {
        match store.get(&spec.name) {
            None => {
                return Err(Error::Config(format!(
                    "checkpoint {} lacks `{}` required by the model config",
                    origin.display(),
                    spec.name
                )))
            }
            Some(t) if t.shape() != spec.shape.as_slice() => {
                return Err(Error::Config(format!(
                    "checkpoint {} has `{}` with shape {:?}, model config expects {:?}",
                    origin.display(),
                    spec.name,
                    t.shape(),
                    spec.shape
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

pub fn load_encoder(dir: &Path, model: &ModelConfig) -> Result<ParameterStore> {
    let store = load_checkpoint(dir)?;
    check_compatible(&store, model, dir)?;
    Ok(store)
}

/// Full and comparison datasets of a task.
pub fn task_data(cfg: &ExperimentConfig, spec: &TaskSpec) -> Result<(TaskDataset, TaskDataset)> {
    let full = gen_task(&cfg.grammar, spec.kind, spec.n_train, spec.n_dev, spec.seed)?;
    let train = match spec.train_size {
        Some(n) => subset(&full, n, spec.subset_seed)?,
        None => full.clone(),
    };
    Ok((full, train))
}

/// Contents of `runs/<task>__<regime>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRun {
    pub task: String,
    pub regime: String,
    pub label: String,
    pub train_examples: usize,
    pub dev_examples: usize,
    pub result: RunResult,
    pub records: Vec<RunRecord>,
}

/// Contents of `runs/sweep.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepLog {
    pub task: String,
    pub result: SweepResult,
    pub runs: Vec<SweepRunLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRunLog {
    pub method: String,
    pub train_size: usize,
    pub records: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSummary {
    /// `(task, regime, result)` in config order.
    pub runs: Vec<(String, Regime, RunResult)>,
    pub sweep: Option<SweepResult>,
}

impl FinetuneSummary {
    pub fn get(&self, task: &str, regime: &str) -> Option<&RunResult> {
        self.runs
            .iter()
            .find(|(t, r, _)| t == task && r.id == regime)
            .map(|(_, _, res)| res)
    }
}

fn train_for(cfg: &ExperimentConfig, regime: &Regime) -> TrainConfig {
    TrainConfig {
        selector: regime.selector.clone(),
        ..cfg.train.clone()
    }
}

fn save_biases(run: &RunResult, out: &OutputDir, task: &str, regime: &str) -> Result<()> {
    for r in &run.best().runs {
        let mut store = r
            .final_params
            .clone()
            .ok_or_else(|| Error::InvalidArgument("run kept no final parameters".into()))?;
        store.retain(|n| names::is_bias(n) && !names::is_head(n));
        save_checkpoint(&store, &out.bias_checkpoint(task, regime, r.seed))?;
    }
    Ok(())
}

/// Trains every (task, regime) pair from the checkpoint at `checkpoint`,
/// then the size sweep when configured. Writes per-regime run JSON, the bias
/// vectors of each selected model, and the summary and fraction tables.
pub fn cmd_finetune(cfg: &ExperimentConfig, checkpoint: &Path, out: &OutputDir) -> Result<FinetuneSummary> {
    cfg.validate()?;
    write_config(cfg, out)?;
    let encoder = load_encoder(checkpoint, &cfg.model)?;
    let regimes = cfg.regimes()?;
    let mut runs = Vec::new();
    for spec in &cfg.tasks {
        let (_, data) = task_data(cfg, spec)?;
        for regime in &regimes {
            let result = crate::trainer::train_task(&encoder, &cfg.model, &data, &train_for(cfg, regime))?;
            save_biases(&result, out, &spec.name, &regime.id)?;
            write_json(
                &out.run_file(&spec.name, &regime.id),
                &RegimeRun {
                    task: spec.name.clone(),
                    regime: regime.id.clone(),
                    label: regime.label.clone(),
                    train_examples: data.train.len(),
                    dev_examples: data.dev.len(),
                    records: run_records(&spec.name, &regime.id, &result),
                    result: result.clone(),
                },
            )?;
            runs.push((spec.name.clone(), regime.clone(), result));
        }
    }
    summary_table(cfg, &runs)?.write(&out.table("summary"))?;
    let fractions = param_fraction_report(&[("model", cfg.model.clone())], &regimes)?;
    fraction_table(&fractions).write(&out.table("param_fraction"))?;

    let sweep = match &cfg.sweep {
        None => None,
        Some(s) => {
            let spec = cfg.task(&s.task).expect("validated");
            let (full, _) = task_data(cfg, spec)?;
            let methods: Vec<Regime> = s.methods.iter().map(|m| resolve_regime(m)).collect::<Result<_>>()?;
            let (result, sweep_runs) = size_sweep(&encoder, &cfg.model, &full, &s.sizes, &methods, &cfg.train)?;
            write_json(
                &out.sweep_file(),
                &SweepLog {
                    task: s.task.clone(),
                    result: result.clone(),
                    runs: sweep_runs
                        .iter()
                        .map(|(m, size, r)| SweepRunLog {
                            method: m.clone(),
                            train_size: *size,
                            records: run_records(&s.task, m, r),
                        })
                        .collect(),
                },
            )?;
            Some(result)
        }
    };
    Ok(FinetuneSummary { runs, sweep })
}

/// One row per regime: `%Param`, then mean and std of dev accuracy, mean
/// train accuracy, and the selected learning rate for every task.
fn summary_table(cfg: &ExperimentConfig, runs: &[(String, Regime, RunResult)]) -> Result<CsvTable> {
    let mut header = vec![
        "regime".to_string(),
        "label".into(),
        "selector".into(),
        "param_percent".into(),
    ];
    for t in &cfg.tasks {
        for col in ["dev_mean", "dev_std", "train_mean", "best_lr", "seeds"] {
            header.push(format!("{}_{col}", t.name));
        }
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = CsvTable::new(SUMMARY_SCHEMA, 1, &header);
    for regime in cfg.regimes()? {
        let mut row = vec![regime.id.clone(), regime.label.clone(), regime.selector.to_string()];
        let mut percent = None;
        for t in &cfg.tasks {
            let (_, _, r) = runs
                .iter()
                .find(|(task, reg, _)| task == &t.name && reg.id == regime.id)
                .ok_or_else(|| Error::InvalidArgument(format!("no run for {} / {}", t.name, regime.id)))?;
            percent.get_or_insert_with(|| fmt_f64(r.param_count.encoder_percent()));
            row.extend([
                fmt_f64(r.dev.mean),
                fmt_f64(r.dev.std),
                fmt_f64(r.train.mean),
                fmt_f64(r.best_lr),
                r.dev.n.to_string(),
            ]);
        }
        row.insert(3, percent.unwrap_or_default());
        table.push(row);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeSummary {
    /// Mean-over-seeds bias change per (task, regime).
    pub bias_change: Vec<(String, String, BiasChangeReport)>,
    /// Gap per (task, regime), recomputed from the per-run records.
    pub gaps: Vec<(String, String, GapReport)>,
    pub sweep: Option<SweepResult>,
}

/// Derives figures and tables from the artifacts of `cmd_pretrain` and
/// `cmd_finetune` in `out`; trains nothing.
pub fn cmd_analyze(out: &OutputDir) -> Result<AnalyzeSummary> {
    let cfg_path = out.config();
    if !cfg_path.exists() {
        return Err(Error::MissingArtifact(cfg_path));
    }
    let cfg = ExperimentConfig::load(&cfg_path)?;
    let pretrained = load_checkpoint(&out.pretrained())?;
    let initial_id = "checkpoints/pretrained";
    let mut summary = AnalyzeSummary {
        bias_change: Vec::new(),
        gaps: Vec::new(),
        sweep: None,
    };
    for task in &cfg.tasks {
        let mut gap_rows = Vec::new();
        for regime in cfg.regimes()? {
            let run: RegimeRun = read_json(&out.run_file(&task.name, &regime.id))?;
            let gap = gap_from_records(&run.records, run.result.best_lr)?;
            let direct = generalization_gap(&run.result)?;
            if gap.gap.mean != direct.gap.mean {
                return Err(Error::Format {
                    path: out.run_file(&task.name, &regime.id),
                    reason: "per-run records disagree with the aggregate result".into(),
                });
            }
            gap_rows.push((regime.id.clone(), gap.clone()));
            summary.gaps.push((task.name.clone(), regime.id.clone(), gap));

            let stem = format!("bias_change_{}__{}", task.name, file_safe(&regime.id));
            let mut per_seed = Vec::new();
            for r in &run.result.best().runs {
                let dir = out.bias_checkpoint(&task.name, &regime.id, r.seed);
                let tuned = load_checkpoint(&dir)?;
                let final_id = format!("checkpoints/{}__{}/seed_{}", task.name, file_safe(&regime.id), r.seed);
                let report = bias_change(&pretrained, &tuned, initial_id, &final_id)?;
                report.to_table()?.write(&out.table(&format!("{stem}_seed_{}", r.seed)))?;
                per_seed.push(report);
            }
            let mean = mean_bias_change(&per_seed)?;
            heatmap_export(
                &mean,
                &out.table(&stem),
                &out.figure(&stem),
                &format!("Bias change, {} / {}", task.name, regime.label),
            )?;
            summary.bias_change.push((task.name.clone(), regime.id.clone(), mean));
        }
        gap_table(&gap_rows).write(&out.table(&format!("generalization_gap_{}", task.name)))?;
    }
    if cfg.sweep.is_some() {
        let log: SweepLog = read_json(&out.sweep_file())?;
        log.result.to_table().write(&out.table("size_sweep"))?;
        let svg = log.result.to_svg(&format!("Dev accuracy vs training set size ({})", log.task));
        let path = out.figure("size_sweep");
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        summary.sweep = Some(log.result);
    }
    Ok(summary)
}

/// Pretrain, fine-tune from the fresh checkpoint, then analyze.
pub fn cmd_run(cfg: &ExperimentConfig, out: &OutputDir) -> Result<(PretrainReport, FinetuneSummary, AnalyzeSummary)> {
    let pre = cmd_pretrain(cfg, out)?;
    let ft = cmd_finetune(cfg, &out.pretrained(), out)?;
    let an = cmd_analyze(out)?;
    Ok((pre, ft, an))
}

/// Writes the run's timestamps; kept apart so every other file is a pure
/// function of the config.
pub fn write_metadata(out: &OutputDir, command: &str, started_unix: u64, finished_unix: u64) -> Result<()> {
    #[derive(Serialize)]
    struct Meta<'a> {
        command: &'a str,
        version: &'a str,
        started_unix: u64,
        finished_unix: u64,
    }
    write_json(
        &out.root.join(METADATA_FILE),
        &Meta {
            command,
            version: env!("CARGO_PKG_VERSION"),
            started_unix,
            finished_unix,
        },
    )
}

/// Process exit status for an error: 2 for configuration problems, 4 for
/// missing inputs, 3 for everything that fails while running.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Selector(_) | Error::Pattern { .. } => 2,
        Error::MissingArtifact(_) => 4,
        _ => 3,
    }
}

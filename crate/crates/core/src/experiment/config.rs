use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::{Regime, Selector};
use crate::tasks::{GrammarParams, TaskKind};
use crate::trainer::{PretrainConfig, TrainConfig};

/// Pretraining corpus, initialization, and MLM optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub corpus_size: usize,
    #[serde(default)]
    pub corpus_seed: u64,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default)]
    pub mlm: PretrainConfig,
}

/// One downstream task. When `train_size` is set, the regime comparison
/// trains on that nested subset of the training split (drawn with
/// `subset_seed`); size sweeps always start from the whole split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub n_train: usize,
    pub n_dev: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train_size: Option<usize>,
    #[serde(default)]
    pub subset_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Name of a task in `tasks`.
    pub task: String,
    /// Strictly increasing; the largest may equal the task's `n_train`.
    pub sizes: Vec<usize>,
    #[serde(default = "default_sweep_methods")]
    pub methods: Vec<String>,
}

fn default_sweep_methods() -> Vec<String> {
    vec!["bitfit".into(), "full".into()]
}

/// The seven standard comparison rows (the row/column random baseline is
/// available by id but not run by default).
pub fn default_regimes() -> Vec<String> {
    ["full", "bitfit", "bq_bm2", "bm2", "bq", "frozen", "rand_uniform"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// A complete, seed-closed experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grammar: GrammarParams,
    pub pretrain: PretrainSection,
    pub tasks: Vec<TaskSpec>,
    /// Standard regime ids or selector strings such as `pattern:*.query.bias`.
    #[serde(default = "default_regimes")]
    pub regimes: Vec<String>,
    /// `selector` here is ignored; each regime supplies its own.
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Output directory used when neither `--out` nor the environment names one.
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

/// Resolves a regime id or selector string.
pub fn resolve_regime(spec: &str) -> Result<Regime> {
    if let Some(r) = Regime::by_id(spec) {
        return Ok(r);
    }
    let selector: Selector = spec
        .parse()
        .map_err(|_| Error::Config(format!("unknown regime `{spec}`")))?;
    Ok(Regime::new(spec, spec, selector))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.model.validate().map_err(cfg_err)?;
        self.grammar.validate().map_err(cfg_err)?;
        self.pretrain.mlm.validate()?;
        self.train.validate()?;
        if self.model.vocab_size != self.grammar.vocab_size() {
            return Err(Error::Config(format!(
                "model.vocab_size is {} but the grammar defines {} tokens",
                self.model.vocab_size,
                self.grammar.vocab_size()
            )));
        }
        if self.model.max_seq_len < self.grammar.sentence_len + 1 {
            return Err(Error::Config(format!(
                "model.max_seq_len {} is shorter than [CLS] plus a {}-token sentence",
                self.model.max_seq_len, self.grammar.sentence_len
            )));
        }
        if self.pretrain.corpus_size <= self.pretrain.mlm.heldout {
            return Err(Error::Config(
                "pretrain.corpus_size must exceed pretrain.mlm.heldout".into(),
            ));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task is required".into()));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.name.is_empty() || !t.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!(
                    "tasks[{i}].name `{}` must be non-empty ASCII letters, digits, `_` or `-`",
                    t.name
                )));
            }
            if self.tasks[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::Config(format!("duplicate task name `{}`", t.name)));
            }
            if t.n_train == 0 || t.n_dev == 0 {
                return Err(Error::Config(format!("tasks[{i}] needs non-empty train and dev splits")));
            }
            if let Some(s) = t.train_size {
                if s == 0 || s > t.n_train {
                    return Err(Error::Config(format!(
                        "tasks[{i}].train_size {s} outside 1..={}",
                        t.n_train
                    )));
                }
            }
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("at least one regime is required".into()));
        }
        let ids: Vec<String> = self.regimes()?.into_iter().map(|r| r.id).collect();
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(Error::Config(format!("duplicate regime `{id}`")));
            }
        }
        if let Some(s) = &self.sweep {
            let task = self
                .task(&s.task)
                .ok_or_else(|| Error::Config(format!("sweep.task `{}` is not a configured task", s.task)))?;
            if s.sizes.is_empty() || s.sizes.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("sweep.sizes must be non-empty and strictly increasing".into()));
            }
            if s.sizes[0] == 0 || *s.sizes.last().unwrap() > task.n_train {
                return Err(Error::Config(format!(
                    "sweep.sizes must lie in 1..={}",
                    task.n_train
                )));
            }
            if s.methods.is_empty() {
                return Err(Error::Config("sweep.methods must not be empty".into()));
            }
            for m in &s.methods {
                resolve_regime(m)?;
            }
            if self.train.seeds.len() < crate::analysis::MIN_SWEEP_SEEDS {
                return Err(Error::Config(format!(
                    "a sweep needs at least {} train.seeds",
                    crate::analysis::MIN_SWEEP_SEEDS
                )));
            }
        }
        Ok(())
    }

    pub fn regimes(&self) -> Result<Vec<Regime>> {
        self.regimes.iter().map(|s| resolve_regime(s)).collect()
    }

    pub fn task(&self, name: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.name == name)
    }

    /// Shifts every seed the config controls: corpus, initialization,
    /// masking, task generation, subsets, and training. Random-baseline
    /// selector seeds are part of a regime's identity and stay fixed.
    pub fn shift_seeds(&mut self, offset: u64) {
        if offset == 0 {
            return;
        }
        let p = &mut self.pretrain;
        p.corpus_seed = p.corpus_seed.wrapping_add(offset);
        p.init_seed = p.init_seed.wrapping_add(offset);
        p.mlm.seed = p.mlm.seed.wrapping_add(offset);
        for t in &mut self.tasks {
            t.seed = t.seed.wrapping_add(offset);
            t.subset_seed = t.subset_seed.wrapping_add(offset);
        }
        for s in &mut self.train.seeds {
            *s = s.wrapping_add(offset);
        }
    }
}

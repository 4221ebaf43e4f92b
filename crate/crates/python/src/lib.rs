//! Python bindings for the `bitfit` crate.
//!
//! Structured results cross the boundary as plain dicts and lists.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyKeyError, PyValueError};
use pyo3::prelude::*;

use bitfit::analysis::{self, BiasChangeReport};
use bitfit::experiment::{self, ExperimentConfig, OutputDir};
use bitfit::model::{HeadKind, ModelConfig as CoreModelConfig};
use bitfit::params::{self, BiasKind, Regime};
use bitfit::tasks::{self, GrammarParams, TaskKind};

create_exception!(bitfit_py, BitfitError, PyException);

fn err(e: bitfit::Error) -> PyErr {
    match e {
        bitfit::Error::Config(m) => PyValueError::new_err(m),
        other => BitfitError::new_err(other.to_string()),
    }
}

/// Serializes through JSON so every result type maps onto builtin Python values.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| BitfitError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn task_kind(kind: &str) -> PyResult<TaskKind> {
    match kind {
        "single" => Ok(TaskKind::Single),
        "pair" => Ok(TaskKind::Pair),
        "tagging" => Ok(TaskKind::Tagging),
        other => Err(PyValueError::new_err(format!("unknown task kind `{other}`"))),
    }
}

/// Encoder shape.
#[pyclass(name = "ModelConfig", from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: CoreModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (num_layers, num_heads, hidden, mlp_width, vocab_size, max_seq_len=16, dropout_p=0.1, num_classes=2))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        num_layers: usize,
        num_heads: usize,
        hidden: usize,
        mlp_width: usize,
        vocab_size: usize,
        max_seq_len: usize,
        dropout_p: f64,
        num_classes: usize,
    ) -> PyResult<Self> {
        let inner = CoreModelConfig {
            num_layers,
            num_heads,
            hidden,
            mlp_width,
            vocab_size,
            max_seq_len,
            dropout_p,
            num_classes,
            type_vocab_size: 2,
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn bert_base() -> Self {
        Self {
            inner: CoreModelConfig::bert_base(),
        }
    }

    #[staticmethod]
    fn bert_large() -> Self {
        Self {
            inner: CoreModelConfig::bert_large(),
        }
    }

    #[staticmethod]
    fn tiny() -> Self {
        Self {
            inner: CoreModelConfig::tiny(),
        }
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.inner.num_layers
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.hidden
    }

    /// Encoder coordinates (embeddings and layers, no heads).
    fn encoder_size(&self) -> usize {
        self.inner.encoder_layout().total()
    }

    /// Trainable-parameter counts of a regime id or selector string on the
    /// classifier fine-tuning layout.
    fn count_params<'py>(&self, py: Python<'py>, regime: &str) -> PyResult<Bound<'py, PyAny>> {
        let r = experiment::resolve_regime(regime).map_err(err)?;
        let layout = self.inner.finetune_layout(HeadKind::Classifier);
        let count = params::count_params(&layout, &r.selector).map_err(err)?;
        let d = to_py(py, &count)?;
        d.set_item("encoder_percent", count.encoder_percent())?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "ModelConfig(num_layers={}, num_heads={}, hidden={}, mlp_width={}, vocab_size={})",
            c.num_layers, c.num_heads, c.hidden, c.mlp_width, c.vocab_size
        )
    }
}

/// Named tensors of a saved checkpoint.
#[pyclass(name = "Checkpoint", skip_from_py_object)]
struct PyCheckpoint {
    inner: params::ParameterStore,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: params::load_checkpoint(&path).map_err(err)?,
        })
    }

    fn names(&self) -> Vec<String> {
        self.inner.names().map(str::to_string).collect()
    }

    fn shape(&self, name: &str) -> PyResult<Vec<usize>> {
        self.inner
            .get(name)
            .map(|t| t.shape().to_vec())
            .ok_or_else(|| PyKeyError::new_err(name.to_string()))
    }

    /// Flat row-major values.
    fn values(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner
            .get(name)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| PyKeyError::new_err(name.to_string()))
    }

    fn total_coords(&self) -> usize {
        self.inner.total_coords()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// An experiment configuration plus its output directory.
#[pyclass(name = "Experiment", skip_from_py_object)]
struct PyExperiment {
    cfg: ExperimentConfig,
    out: OutputDir,
}

#[pymethods]
impl PyExperiment {
    #[new]
    #[pyo3(signature = (config, out, seed_offset=0))]
    fn new(config: PathBuf, out: PathBuf, seed_offset: u64) -> PyResult<Self> {
        let mut cfg = ExperimentConfig::load(&config).map_err(err)?;
        cfg.shift_seeds(seed_offset);
        cfg.validate().map_err(err)?;
        Ok(Self {
            cfg,
            out: OutputDir::new(out),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (text, out))]
    fn from_toml(text: &str, out: PathBuf) -> PyResult<Self> {
        let cfg = ExperimentConfig::from_toml_str(text).map_err(err)?;
        Ok(Self {
            cfg,
            out: OutputDir::new(out),
        })
    }

    #[getter]
    fn regimes(&self) -> Vec<String> {
        self.cfg.regimes.clone()
    }

    #[setter]
    fn set_regimes(&mut self, regimes: Vec<String>) -> PyResult<()> {
        let old = std::mem::replace(&mut self.cfg.regimes, regimes);
        if let Err(e) = self.cfg.validate() {
            self.cfg.regimes = old;
            return Err(err(e));
        }
        Ok(())
    }

    #[getter]
    fn out(&self) -> PathBuf {
        self.out.root.clone()
    }

    fn config_toml(&self) -> PyResult<String> {
        self.cfg.to_toml_string().map_err(err)
    }

    /// Releases the GIL while training.
    fn pretrain<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = py
            .detach(|| experiment::cmd_pretrain(&self.cfg, &self.out))
            .map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (checkpoint=None))]
    fn finetune<'py>(&self, py: Python<'py>, checkpoint: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
        let ckpt = checkpoint.unwrap_or_else(|| self.out.pretrained());
        let s = py
            .detach(|| experiment::cmd_finetune(&self.cfg, &ckpt, &self.out))
            .map_err(err)?;
        let runs: Vec<_> = s
            .runs
            .iter()
            .map(|(task, regime, result)| {
                serde_json::json!({ "task": task, "regime": regime.id, "result": result })
            })
            .collect();
        to_py(py, &serde_json::json!({ "runs": runs, "sweep": s.sweep }))
    }

    fn analyze<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        analyze(py, self.out.root.clone())
    }

    fn run<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        self.pretrain(py)?;
        self.finetune(py, None)?;
        self.analyze(py)
    }
}

/// Bias-change matrices, gaps and the sweep of a finished results directory.
#[pyfunction]
fn analyze(py: Python<'_>, out: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    let out = OutputDir::new(out);
    let s = py.detach(|| experiment::cmd_analyze(&out)).map_err(err)?;
    let bias: Vec<_> = s
        .bias_change
        .iter()
        .map(|(task, regime, r)| serde_json::json!({ "task": task, "regime": regime, "report": report_json(r) }))
        .collect();
    let gaps: Vec<_> = s
        .gaps
        .iter()
        .map(|(task, regime, g)| serde_json::json!({ "task": task, "regime": regime, "gap": g }))
        .collect();
    to_py(py, &serde_json::json!({ "bias_change": bias, "gaps": gaps, "sweep": s.sweep }))
}

fn report_json(r: &BiasChangeReport) -> serde_json::Value {
    let rows: serde_json::Map<String, serde_json::Value> = BiasKind::ALL
        .iter()
        .map(|k| (k.symbol().to_string(), serde_json::json!(r.row(*k))))
        .collect();
    serde_json::json!({ "num_layers": r.num_layers, "rows": rows })
}

/// Reads a bias-change CSV into `{bias symbol: [per-layer values]}`.
#[pyfunction]
fn read_bias_change(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    let r = BiasChangeReport::read_csv(&path).map_err(err)?;
    to_py(py, &report_json(&r))
}

/// `(1/dim) * sum |b0 - bf|`.
#[pyfunction]
fn mean_abs_change(b0: Vec<f64>, bf: Vec<f64>) -> PyResult<f64> {
    analysis::mean_abs_change(&b0, &bf).map_err(err)
}

/// Trainable fractions of the standard regimes on the BERT-base and
/// BERT-large shapes, plus any extra configs given.
#[pyfunction]
#[pyo3(signature = (extra=None))]
fn param_fractions(py: Python<'_>, extra: Option<Vec<(String, PyModelConfig)>>) -> PyResult<Bound<'_, PyAny>> {
    let mut configs = vec![
        ("bert_base".to_string(), CoreModelConfig::bert_base()),
        ("bert_large".to_string(), CoreModelConfig::bert_large()),
    ];
    configs.extend(extra.unwrap_or_default().into_iter().map(|(n, c)| (n, c.inner)));
    let named: Vec<(&str, CoreModelConfig)> = configs.iter().map(|(n, c)| (n.as_str(), c.clone())).collect();
    let rows = analysis::param_fraction_report(&named, &Regime::standard()).map_err(err)?;
    let out: Vec<_> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "config": r.config,
                "regime": r.regime,
                "selector": r.selector,
                "trainable": r.count.encoder_trainable,
                "encoder_total": r.count.encoder_total,
                "percent": r.count.encoder_percent(),
                "label": r.percent_label(),
            })
        })
        .collect();
    to_py(py, &out)
}

/// Synthetic task examples as `{"train": [...], "dev": [...], "num_labels": n}`
/// with the default grammar.
#[pyfunction]
#[pyo3(signature = (kind, n_train, n_dev, seed=0))]
fn gen_task<'py>(py: Python<'py>, kind: &str, n_train: usize, n_dev: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let data = tasks::gen_task(&GrammarParams::default(), task_kind(kind)?, n_train, n_dev, seed).map_err(err)?;
    let split = |xs: &[tasks::Example]| -> Vec<serde_json::Value> {
        xs.iter()
            .map(|e| serde_json::json!({ "tokens": e.tokens, "segments": e.segments, "labels": e.labels }))
            .collect()
    };
    to_py(
        py,
        &serde_json::json!({
            "train": split(&data.train),
            "dev": split(&data.dev),
            "num_labels": data.num_labels,
            "vocab_size": data.grammar.vocab_size(),
        }),
    )
}

/// The standard regime ids.
#[pyfunction]
fn standard_regimes() -> Vec<String> {
    Regime::standard().into_iter().map(|r| r.id).collect()
}

#[pymodule]
fn bitfit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BitfitError", m.py().get_type::<BitfitError>())?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(read_bias_change, m)?)?;
    m.add_function(wrap_pyfunction!(mean_abs_change, m)?)?;
    m.add_function(wrap_pyfunction!(param_fractions, m)?)?;
    m.add_function(wrap_pyfunction!(gen_task, m)?)?;
    m.add_function(wrap_pyfunction!(standard_regimes, m)?)?;
    Ok(())
}

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::svg;
use super::table::{fmt_f64, parse_f64, CsvTable};
use crate::error::{Error, Result};
use crate::params::{BiasKind, ParamSnapshot, ParameterStore};
use crate::tensor::Tensor;

pub const BIAS_CHANGE_SCHEMA: &str = "bias_change";
pub const BIAS_CHANGE_VERSION: u32 = 1;

/// Anything that can look up a tensor by parameter name.
pub trait TensorLookup {
    fn tensor(&self, name: &str) -> Option<&Tensor>;
}

impl TensorLookup for ParameterStore {
    fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

impl TensorLookup for ParamSnapshot {
    fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

/// Average absolute change of each per-layer bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasChangeReport {
    pub num_layers: usize,
    /// `values[k][l]` for bias kind `BiasKind::ALL[k]` in layer `l` (0-based).
    pub values: Vec<Vec<f64>>,
    pub initial_id: String,
    pub final_id: String,
}

impl BiasChangeReport {
    pub fn zeros(num_layers: usize) -> Self {
        Self {
            num_layers,
            values: vec![vec![0.0; num_layers]; BiasKind::ALL.len()],
            initial_id: String::new(),
            final_id: String::new(),
        }
    }

    pub fn get(&self, kind: BiasKind, layer: usize) -> f64 {
        self.values[kind_index(kind)][layer]
    }

    pub fn row(&self, kind: BiasKind) -> &[f64] {
        &self.values[kind_index(kind)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().flatten().copied().fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<()> {
        if self.values.len() != BiasKind::ALL.len()
            || self.values.iter().any(|r| r.len() != self.num_layers)
        {
            return Err(Error::Mismatch(format!(
                "bias-change matrix must be {} x {}",
                BiasKind::ALL.len(),
                self.num_layers
            )));
        }
        Ok(())
    }

    pub fn to_table(&self) -> Result<CsvTable> {
        self.validate()?;
        let mut header = vec!["bias".to_string()];
        header.extend((1..=self.num_layers).map(|l| format!("layer_{l}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut t = CsvTable::new(BIAS_CHANGE_SCHEMA, BIAS_CHANGE_VERSION, &header)
            .with_meta("initial", &self.initial_id)
            .with_meta("final", &self.final_id);
        for (k, kind) in BiasKind::ALL.iter().enumerate() {
            let mut row = vec![kind.symbol().to_string()];
            row.extend(self.values[k].iter().map(|&v| fmt_f64(v)));
            t.push(row);
        }
        Ok(t)
    }

    pub fn from_table(t: &CsvTable, origin: &Path) -> Result<Self> {
        t.expect_schema(BIAS_CHANGE_SCHEMA, BIAS_CHANGE_VERSION, origin)?;
        let bad = |reason: String| Error::Format {
            path: origin.to_path_buf(),
            reason,
        };
        let num_layers = t.header.len().saturating_sub(1);
        let mut report = Self::zeros(num_layers);
        let mut seen = [false; 8];
        for row in &t.rows {
            let kind = BiasKind::from_symbol(&row[0])
                .ok_or_else(|| bad(format!("unknown bias type `{}`", row[0])))?;
            let k = kind_index(kind);
            seen[k] = true;
            for l in 0..num_layers {
                report.values[k][l] = parse_f64(&row[l + 1], origin)?;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("bias-change table is missing a bias type".into()));
        }
        report.initial_id = t.meta.get("initial").cloned().unwrap_or_default();
        report.final_id = t.meta.get("final").cloned().unwrap_or_default();
        Ok(report)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_table(&CsvTable::read(path)?, path)
    }

    pub fn to_svg(&self, title: &str) -> String {
        let rows: Vec<String> = BiasKind::ALL.iter().map(|k| k.symbol().to_string()).collect();
        let cols: Vec<String> = (1..=self.num_layers).map(|l| l.to_string()).collect();
        svg::heatmap(title, &rows, &cols, &self.values)
    }
}

fn kind_index(kind: BiasKind) -> usize {
    BiasKind::ALL.iter().position(|&k| k == kind).expect("listed kind")
}

/// `(1/n) * sum |b0_i - bf_i|`.
pub fn mean_abs_change(b0: &[f64], bf: &[f64]) -> Result<f64> {
    if b0.len() != bf.len() {
        return Err(Error::shape("bias_change", &[b0.len()], &[bf.len()]));
    }
    if b0.is_empty() {
        return Err(Error::InvalidArgument("bias vector is empty".into()));
    }
    Ok(b0.iter().zip(bf).map(|(a, b)| (a - b).abs()).sum::<f64>() / b0.len() as f64)
}

/// Number of encoder layers present, counted by query biases.
fn count_layers(store: &impl TensorLookup) -> usize {
    (0..)
        .take_while(|&l| store.tensor(&BiasKind::Query.bias_name(l)).is_some())
        .count()
}

/// Per-layer bias change between an initial snapshot and a fine-tuned store.
pub fn bias_change(
    b0: &impl TensorLookup,
    bf: &impl TensorLookup,
    initial_id: &str,
    final_id: &str,
) -> Result<BiasChangeReport> {
    let num_layers = count_layers(b0);
    if num_layers == 0 {
        return Err(Error::Mismatch("initial parameters contain no encoder layers".into()));
    }
    if count_layers(bf) != num_layers {
        return Err(Error::Mismatch(format!(
            "layer counts differ: {num_layers} vs {}",
            count_layers(bf)
        )));
    }
    let mut report = BiasChangeReport::zeros(num_layers);
    for (k, kind) in BiasKind::ALL.iter().enumerate() {
        for l in 0..num_layers {
            let name = kind.bias_name(l);
            let a = b0.tensor(&name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            let b = bf.tensor(&name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            if a.shape() != b.shape() {
                return Err(Error::Mismatch(format!(
                    "`{name}` has shape {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            report.values[k][l] = mean_abs_change(a.data(), b.data())?;
        }
    }
    report.initial_id = initial_id.to_string();
    report.final_id = final_id.to_string();
    Ok(report)
}

/// Entry-wise mean of several reports, e.g. one per seed.
pub fn mean_bias_change(reports: &[BiasChangeReport]) -> Result<BiasChangeReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to average".into()))?;
    let mut out = BiasChangeReport::zeros(first.num_layers);
    for r in reports {
        r.validate()?;
        if r.num_layers != first.num_layers {
            return Err(Error::Mismatch("reports disagree on layer count".into()));
        }
        for (acc, row) in out.values.iter_mut().zip(&r.values) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    for v in out.values.iter_mut().flatten() {
        *v /= reports.len() as f64;
    }
    out.initial_id = first.initial_id.clone();
    out.final_id = format!("mean of {} runs", reports.len());
    Ok(out)
}

/// Writes the report as CSV and as an SVG heatmap.
pub fn heatmap_export(report: &BiasChangeReport, csv_path: &Path, svg_path: &Path, title: &str) -> Result<()> {
    report.to_table()?.write(csv_path)?;
    if let Some(dir) = svg_path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(svg_path, report.to_svg(title)).map_err(|e| Error::io(svg_path, e))
}

//! Schema-versioned CSV files.
//!
//! Layout: a preamble of `# key: value` lines whose first entry is
//! `# schema: <name>/v<version>`, then an ordinary CSV header and rows.
//! Floats are written with 17 significant digits so they parse back exactly.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};

/// Lossless float formatting used in every emitted table.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub schema: String,
    pub version: u32,
    /// Preamble entries after the schema line, in file order.
    pub meta: IndexMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(schema: &str, version: u32, header: &[&str]) -> Self {
        Self {
            schema: schema.to_string(),
            version,
            meta: IndexMap::new(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut out = format!("# schema: {}/v{}\n", self.schema, self.version);
        for (k, v) in &self.meta {
            if k.contains(':') || k.contains('\n') || v.contains('\n') {
                return Err(Error::InvalidArgument(format!("bad preamble entry `{k}`")));
            }
            out.push_str(&format!("# {k}: {v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut write = |rec: &[String]| {
            w.write_record(rec)
                .map_err(|e| Error::InvalidArgument(format!("csv encode: {e}")))
        };
        write(&self.header)?;
        for r in &self.rows {
            if r.len() != self.header.len() {
                return Err(Error::InvalidArgument(format!(
                    "row has {} fields, header has {}",
                    r.len(),
                    self.header.len()
                )));
            }
            write(r)?;
        }
        let body = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(format!("csv encode: {e}")))?;
        out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = self.to_csv_string()?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: origin.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        let mut consumed = 0usize;
        let first = lines.next().ok_or_else(|| bad("empty file".into()))?;
        consumed += first.len() + 1;
        let tag = first
            .strip_prefix("# schema: ")
            .ok_or_else(|| bad("missing `# schema:` line".into()))?;
        let (schema, version) = tag
            .rsplit_once("/v")
            .ok_or_else(|| bad(format!("schema tag `{tag}` lacks a version")))?;
        let version: u32 = version
            .parse()
            .map_err(|_| bad(format!("bad schema version in `{tag}`")))?;
        let mut meta = IndexMap::new();
        for line in lines {
            let Some(entry) = line.strip_prefix("# ") else {
                break;
            };
            consumed += line.len() + 1;
            let (k, v) = entry
                .split_once(": ")
                .ok_or_else(|| bad(format!("bad preamble line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let body = text.get(consumed.min(text.len())..).unwrap_or("");
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(body.as_bytes());
        let header = r
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| {
                rec.map(|rec| rec.iter().map(str::to_string).collect())
                    .map_err(|e| bad(e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schema: schema.to_string(),
            version,
            meta,
            header,
            rows,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Checks the schema name and version.
    pub fn expect_schema(&self, schema: &str, version: u32, origin: &Path) -> Result<()> {
        if self.schema != schema || self.version != version {
            return Err(Error::Format {
                path: origin.to_path_buf(),
                reason: format!(
                    "expected schema {schema}/v{version}, found {}/v{}",
                    self.schema, self.version
                ),
            });
        }
        Ok(())
    }
}

pub(crate) fn parse_f64(field: &str, origin: &Path) -> Result<f64> {
    field.parse().map_err(|_| Error::Format {
        path: origin.to_path_buf(),
        reason: format!("`{field}` is not a number"),
    })
}

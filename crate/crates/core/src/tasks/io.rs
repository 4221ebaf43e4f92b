//! Line-delimited JSON for task examples.
//!
//! One object per line: `{"tokens": [..], "segments": [..], "label": L}` where
//! `L` is an integer for sentence-level tasks and an array of integers (with
//! `null` at ignored positions) for tagging.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Example;
use crate::error::{Error, Result};
use crate::model::IGNORE_LABEL;

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Label {
    Class(usize),
    Tags(Vec<Option<usize>>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    tokens: Vec<usize>,
    #[serde(default)]
    segments: Option<Vec<usize>>,
    label: Label,
}

fn to_line(ex: &Example, tagging: bool) -> Line {
    let label = if tagging {
        Label::Tags(
            ex.labels
                .iter()
                .map(|&l| (l != IGNORE_LABEL).then_some(l))
                .collect(),
        )
    } else {
        Label::Class(ex.labels[0])
    };
    Line {
        tokens: ex.tokens.clone(),
        segments: Some(ex.segments.clone()),
        label,
    }
}

pub fn write_jsonl(path: &Path, examples: &[Example], tagging: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, &to_line(ex, tagging))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        let segments = parsed
            .segments
            .unwrap_or_else(|| vec![0; parsed.tokens.len()]);
        if segments.len() != parsed.tokens.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: segments and tokens differ in length", i + 1),
            });
        }
        let labels = match parsed.label {
            Label::Class(c) => vec![c],
            Label::Tags(t) => t.into_iter().map(|l| l.unwrap_or(IGNORE_LABEL)).collect(),
        };
        out.push(Example {
            tokens: parsed.tokens,
            segments,
            labels,
        });
    }
    Ok(out)
}

//! Line-delimited JSON manifests describing a dataset.
//!
//! Blank lines and lines starting with `#` are ignored. A line without an
//! `id` field is a header naming the default matrix file and an optional
//! generation dump; every other line is one input record:
//!
//! ```text
//! {"matrix": "vectors.clh1", "generations": "generations.jsonl"}
//! {"id": "q1", "row": 0, "split": "initial_reference", "runs": 10, "passes": 10}
//! {"id": "q2", "row": 1, "text": "What is 2+2?", "input_logprobs": [-0.3, -1.2]}
//! ```
//!
//! Records may name their own `matrix`; all referenced matrices must share a
//! column count and are stacked in order of first reference. Paths are
//! relative to the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adequa_core::dataset::Aux;
use adequa_core::{Dataset, InputRecord, RunOutcomes, Split, VectorSet};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_atomic, Error, Result};
use crate::{clh, dump};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generations: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub id: String,
    pub row: usize,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passes: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_logprobs: Option<Vec<f64>>,
}

fn default_split() -> Split {
    Split::Pool
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub header: Header,
    /// Records with the 1-based line they came from.
    pub records: Vec<(usize, Record)>,
}

/// Deserialises one JSON line, reporting the path of the offending field.
pub(crate) fn parse_line<T: serde::de::DeserializeOwned>(path: &Path, line: usize, text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let msg = e.into_inner().to_string();
        if field == "." {
            Error::Line { path: path.to_owned(), line, msg }
        } else {
            Error::Line { path: path.to_owned(), line, msg: format!("{field}: {msg}") }
        }
    })
}

pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_manifest(path: &Path, text: &str) -> Result<Manifest> {
    let mut m = Manifest::default();
    let mut seen_header = false;
    for (line, l) in content_lines(text) {
        let value: serde_json::Value = parse_line(path, line, l)?;
        if value.get("id").is_some() {
            m.records.push((line, parse_line(path, line, l)?));
        } else {
            if seen_header || !m.records.is_empty() {
                let msg = "header line must come first and appear once".to_string();
                return Err(Error::Line { path: path.to_owned(), line, msg });
            }
            m.header = parse_line(path, line, l)?;
            seen_header = true;
        }
    }
    Ok(m)
}

pub fn render_manifest(m: &Manifest) -> String {
    let mut out = String::new();
    if m.header != Header::default() {
        out.push_str(&serde_json::to_string(&m.header).expect("plain data"));
        out.push('\n');
    }
    for (_, r) in &m.records {
        out.push_str(&serde_json::to_string(r).expect("plain data"));
        out.push('\n');
    }
    out
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

/// Reads, joins and validates a manifest and everything it references.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let m = parse_manifest(path, &read_to_string(path)?)?;
    let dir = base_dir(path);
    let line_err = |line: usize, msg: String| Error::Line { path: path.to_owned(), line, msg };

    // Load each referenced matrix once, in order of first reference.
    let mut offsets: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut stacked: Option<VectorSet> = None;
    let mut first_file: Option<PathBuf> = None;
    let mut resolved = Vec::with_capacity(m.records.len());
    for (line, r) in &m.records {
        let Some(name) = r.matrix.as_ref().or(m.header.matrix.as_ref()) else {
            return Err(line_err(*line, format!("record {:?} names no matrix and there is no header default", r.id)));
        };
        if !offsets.contains_key(name) {
            let file = dir.join(name);
            let x = clh::read_matrix(&file)?;
            let start = stacked.as_ref().map_or(0, VectorSet::rows);
            stacked = Some(match stacked {
                None => {
                    first_file = Some(file);
                    x.clone()
                }
                Some(s) => {
                    if s.cols() != x.cols() {
                        let first = first_file.as_ref().expect("set with the first matrix").display();
                        return Err(Error::format(
                            &file,
                            format!("{} columns, but {first} has {}", x.cols(), s.cols()),
                        ));
                    }
                    s.vstack(&x)?
                }
            });
            offsets.insert(name.clone(), (start, x.rows()));
        }
        let (start, rows) = offsets[name];
        if r.row >= rows {
            return Err(line_err(
                *line,
                adequa_core::Error::RowOutOfBounds { id: r.id.clone(), row: r.row, rows }.to_string(),
            ));
        }
        resolved.push(start + r.row);
    }

    let mut records = Vec::with_capacity(m.records.len());
    let mut outcomes = BTreeMap::new();
    let mut logprobs = BTreeMap::new();
    let mut lines: BTreeMap<&str, usize> = BTreeMap::new();
    for ((line, r), row) in m.records.iter().zip(resolved) {
        if let Some(first) = lines.insert(&r.id, *line) {
            return Err(line_err(*line, format!("duplicate id {:?} (first on line {first})", r.id)));
        }
        match (r.runs, r.passes) {
            (Some(runs), Some(passes)) => {
                let o = RunOutcomes::new(runs, passes).map_err(|e| line_err(*line, e.to_string()))?;
                if runs == 0 {
                    return Err(line_err(*line, adequa_core::Error::UndefinedLabel.to_string()));
                }
                outcomes.insert(r.id.clone(), o);
            }
            (None, None) => {}
            _ => return Err(line_err(*line, "runs and passes must be given together".into())),
        }
        if let Some(lp) = &r.input_logprobs {
            logprobs.insert(r.id.clone(), lp.clone());
        }
        records.push(InputRecord { id: r.id.clone(), row, text: r.text.clone(), split: r.split });
    }

    let vectors = match stacked {
        Some(v) => v,
        None => return Err(Error::format(path, "manifest has no records")),
    };
    let generations = match &m.header.generations {
        Some(g) => Some(dump::read_dump(&dir.join(g))?),
        None => None,
    };
    let data = Dataset::new(vectors, records, outcomes)?;
    Ok(data.with_aux(Aux { input_logprobs: logprobs, generations })?)
}

/// File names used by [`save_dataset`].
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MATRIX_FILE: &str = "vectors.clh1";
pub const DUMP_FILE: &str = "generations.jsonl";

/// Writes `data` as a manifest plus one matrix (and a generation dump when
/// present) into `dir`, returning the manifest path. Vectors are stored at
/// 32-bit precision.
pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<PathBuf> {
    clh::write_matrix(data.vectors(), &dir.join(MATRIX_FILE))?;
    let generations = match &data.aux().generations {
        Some(g) => {
            dump::write_dump(g, &dir.join(DUMP_FILE))?;
            Some(DUMP_FILE.to_string())
        }
        None => None,
    };
    let records = data
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let o = data.outcomes().get(&r.id);
            let rec = Record {
                id: r.id.clone(),
                row: r.row,
                split: r.split,
                matrix: None,
                runs: o.map(|o| o.runs),
                passes: o.map(|o| o.passes),
                text: r.text.clone(),
                input_logprobs: data.aux().input_logprobs.get(&r.id).cloned(),
            };
            (i + 1, rec)
        })
        .collect();
    let m = Manifest { header: Header { matrix: Some(MATRIX_FILE.into()), generations }, records };
    let path = dir.join(MANIFEST_FILE);
    write_atomic(&path, render_manifest(&m).as_bytes())?;
    Ok(path)
}

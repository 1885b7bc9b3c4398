//! Label files and the verdict shorthand.
//!
//! A label is either full run counts, `{"id": "q1", "runs": 10, "passes": 7}`,
//! or a single human verdict, `{"id": "q1", "verdict": "pass"}`. A pass
//! verdict is recorded as one passing run out of one, a fail as zero out of
//! one, and a skip as an abstention.

use std::collections::BTreeMap;
use std::path::Path;

use adequa_core::campaign::Label;
use adequa_core::synth::GroundTruth;
use adequa_core::RunOutcomes;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_atomic, Error, Result};
use crate::manifest::{content_lines, parse_line};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passes: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

impl LabelEntry {
    pub fn outcome(id: impl Into<String>, o: RunOutcomes) -> Self {
        LabelEntry { id: id.into(), runs: Some(o.runs), passes: Some(o.passes), verdict: None }
    }

    /// The label this entry stands for; the error names the offending field.
    pub fn to_label(&self) -> std::result::Result<Label, (&'static str, String)> {
        match (self.runs, self.passes, self.verdict) {
            (None, None, Some(Verdict::Pass)) => Ok(Label::Outcome(RunOutcomes { runs: 1, passes: 1 })),
            (None, None, Some(Verdict::Fail)) => Ok(Label::Outcome(RunOutcomes { runs: 1, passes: 0 })),
            (None, None, Some(Verdict::Skip)) => Ok(Label::Abstain),
            (Some(runs), Some(passes), None) => {
                if runs == 0 {
                    return Err(("runs", "must be at least 1".into()));
                }
                RunOutcomes::new(runs, passes).map(Label::Outcome).map_err(|e| ("passes", e.to_string()))
            }
            (_, _, Some(_)) => Err(("verdict", "give either a verdict or runs and passes, not both".into())),
            (Some(_), None, None) => Err(("passes", "missing".into())),
            (None, _, None) => Err(("runs", "missing".into())),
        }
    }
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>> {
    let text = read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (line, l) in content_lines(&text) {
        let e: LabelEntry = parse_line(path, line, l)?;
        let label = e.to_label().map_err(|(field, msg)| Error::Line {
            path: path.to_owned(),
            line,
            msg: format!("{field}: {msg}"),
        })?;
        if out.insert(e.id.clone(), label).is_some() {
            return Err(Error::Line { path: path.to_owned(), line, msg: format!("duplicate id {:?}", e.id) });
        }
    }
    Ok(out)
}

/// Pass rates of every labelled input in a label file; abstentions are
/// left out.
pub fn read_pass_rates(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (id, label) in read_labels(path)? {
        if let Label::Outcome(o) = label {
            out.insert(id, o.label()?.pass_rate);
        }
    }
    Ok(out)
}

pub fn write_labels(entries: &[LabelEntry], path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("plain data"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub const TRUTH_FILE: &str = "truth.json";

pub fn write_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(truth).expect("plain data");
    write_atomic(path, text.as_bytes())
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let text = read_to_string(path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Field {
        path: path.to_owned(),
        field: e.path().to_string(),
        msg: e.into_inner().to_string(),
    })
}

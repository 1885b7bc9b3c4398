//! In-memory dataset model shared by every stage: vectors, input records and
//! observed run outcomes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::baseline::GenerationDump;
use crate::{Error, Result, VectorSet};

/// Where an input enters the campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Pool,
    InitialReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub id: String,
    pub row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub split: Split,
}

/// Verdicts from repeated generations for a single input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcomes {
    pub runs: u32,
    pub passes: u32,
}

/// Pass rate and majority verdict of an input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassLabel {
    pub pass_rate: f64,
    pub is_pass: bool,
}

/// Default number of repeated generations per labelled input.
pub const DEFAULT_RUNS: u32 = 10;

impl RunOutcomes {
    pub fn new(runs: u32, passes: u32) -> Result<Self> {
        if passes > runs {
            return Err(Error::InvalidOutcomes { runs, passes });
        }
        Ok(RunOutcomes { runs, passes })
    }

    pub fn label(&self) -> Result<PassLabel> {
        aggregate_pass(*self)
    }
}

/// An input passes when strictly more than half of its runs are correct, so
/// 5 out of 10 is a failure.
pub fn aggregate_pass(o: RunOutcomes) -> Result<PassLabel> {
    if o.runs == 0 {
        return Err(Error::UndefinedLabel);
    }
    if o.passes > o.runs {
        return Err(Error::InvalidOutcomes { runs: o.runs, passes: o.passes });
    }
    let pass_rate = o.passes as f64 / o.runs as f64;
    // 2·passes > runs is the exact form of pass_rate > 0.5.
    Ok(PassLabel { pass_rate, is_pass: 2 * u64::from(o.passes) > u64::from(o.runs) })
}

/// Optional per-input artefacts used only by baseline metrics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aux {
    pub input_logprobs: BTreeMap<String, Vec<f64>>,
    pub generations: Option<GenerationDump>,
}

/// Validated, immutable collection of inputs over one vector matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vectors: VectorSet,
    records: Vec<InputRecord>,
    index: BTreeMap<String, usize>,
    outcomes: BTreeMap<String, RunOutcomes>,
    aux: Aux,
}

impl Dataset {
    pub fn new(
        vectors: VectorSet,
        records: Vec<InputRecord>,
        outcomes: BTreeMap<String, RunOutcomes>,
    ) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.row >= vectors.rows() {
                return Err(Error::RowOutOfBounds {
                    id: r.id.clone(),
                    row: r.row,
                    rows: vectors.rows(),
                });
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        for (id, o) in &outcomes {
            if !index.contains_key(id) {
                return Err(Error::UnknownId(id.clone()));
            }
            RunOutcomes::new(o.runs, o.passes)?;
        }
        Ok(Dataset { vectors, records, index, outcomes, aux: Aux::default() })
    }

    pub fn with_aux(mut self, aux: Aux) -> Result<Self> {
        for id in aux.input_logprobs.keys() {
            if !self.index.contains_key(id) {
                return Err(Error::UnknownId(id.clone()));
            }
        }
        if let Some(dump) = &aux.generations {
            for id in dump.ids() {
                if !self.index.contains_key(id) {
                    return Err(Error::UnknownId(id.into()));
                }
            }
        }
        self.aux = aux;
        Ok(self)
    }

    pub fn vectors(&self) -> &VectorSet {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn records(&self) -> &[InputRecord] {
        &self.records
    }

    pub fn outcomes(&self) -> &BTreeMap<String, RunOutcomes> {
        &self.outcomes
    }

    pub fn aux(&self) -> &Aux {
        &self.aux
    }

    pub fn record(&self, id: &str) -> Option<&InputRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Hidden-state vector of an input.
    pub fn vector(&self, id: &str) -> Result<&[f64]> {
        let rec = self.record(id).ok_or_else(|| Error::UnknownId(id.into()))?;
        Ok(self.vectors.row(rec.row))
    }

    /// Matrix of the given inputs' vectors, in the given order.
    pub fn gather<S: AsRef<str>>(&self, ids: &[S]) -> Result<VectorSet> {
        let rows = ids
            .iter()
            .map(|id| {
                let id = id.as_ref();
                self.record(id).map(|r| r.row).ok_or_else(|| Error::UnknownId(id.into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.vectors.select_rows(&rows))
    }

    pub fn ids_in_split(&self, split: Split) -> impl Iterator<Item = &str> + '_ {
        self.records.iter().filter(move |r| r.split == split).map(|r| r.id.as_str())
    }
}

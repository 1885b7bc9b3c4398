//! Comparison metrics: label-free input likelihood, post-generation
//! confidence and dispersion scores, and the top-quantile overlap analysis.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, VectorSet};

/// One sampled generation for an input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub logprobs: Vec<f64>,
    pub entropies: Vec<f64>,
    /// Hidden state of the final output token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lohs: Option<Vec<f64>>,
    /// Semantic-equivalence cluster assigned by the extractor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
}

/// Per-input generation records produced by the extractor.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationDump {
    pub inputs: BTreeMap<String, Vec<Generation>>,
    /// Sampling temperature recorded by the extractor, opaque here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl GenerationDump {
    pub fn ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.inputs.keys().map(String::as_str)
    }

    /// Checks the structural invariants: non-empty sequences of equal length,
    /// cluster ids on all or none of an input's generations, one LOHS width.
    pub fn validate(&self) -> Result<()> {
        let mut width = None;
        for (id, gens) in &self.inputs {
            if gens.is_empty() {
                return Err(Error::Empty("generation list"));
            }
            let with_cluster = gens.iter().filter(|g| g.cluster.is_some()).count();
            if with_cluster != 0 && with_cluster != gens.len() {
                return Err(Error::InvalidDump(alloc::format!(
                    "input {id:?}: cluster ids missing on some generations"
                )));
            }
            for g in gens {
                if g.logprobs.is_empty() {
                    return Err(Error::Empty("token sequence"));
                }
                if g.logprobs.len() != g.entropies.len() {
                    return Err(Error::LengthMismatch {
                        left: g.logprobs.len(),
                        right: g.entropies.len(),
                    });
                }
                if let Some(v) = &g.lohs {
                    match width {
                        None => width = Some(v.len()),
                        Some(w) if w != v.len() => {
                            return Err(Error::DimensionMismatch { expected: w, got: v.len() })
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sequence log-likelihood: mean token log-probability of the input.
pub fn sll(input_token_logprobs: &[f64]) -> Result<f64> {
    if input_token_logprobs.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    Ok(mean(input_token_logprobs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenConfidence {
    /// Mean token log-probability.
    pub tok_prob: f64,
    /// Mean token entropy.
    pub tok_ent: f64,
}

pub fn token_confidence(gen: &Generation) -> Result<TokenConfidence> {
    if gen.logprobs.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    if gen.logprobs.len() != gen.entropies.len() {
        return Err(Error::LengthMismatch { left: gen.logprobs.len(), right: gen.entropies.len() });
    }
    Ok(TokenConfidence { tok_prob: mean(&gen.logprobs), tok_ent: mean(&gen.entropies) })
}

/// Entropy of the cluster-size distribution over `M` generations.
pub fn semantic_entropy(cluster_ids: &[u32]) -> Result<f64> {
    if cluster_ids.is_empty() {
        return Err(Error::Empty("generation list"));
    }
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &c in cluster_ids {
        *counts.entry(c).or_default() += 1;
    }
    let m = cluster_ids.len() as f64;
    let h = -counts.values().map(|&n| (n as f64 / m) * (n as f64 / m).ln()).sum::<f64>();
    Ok(h.max(0.0))
}

/// Trace of the unbiased sample covariance of the rows.
pub fn lohs_variance(vectors: &VectorSet) -> Result<f64> {
    let m = vectors.rows();
    if m < 2 {
        return Err(Error::TooFewRows { needed: 2, got: m });
    }
    let mu = vectors.mean();
    let ss: f64 = vectors
        .iter_rows()
        .map(|r| r.iter().zip(&mu).map(|(v, c)| (v - c) * (v - c)).sum::<f64>())
        .sum();
    Ok(ss / (m - 1) as f64)
}

/// Post-generation scores of one input, aggregated over its generations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostGenerationScores {
    pub tok_prob: f64,
    pub tok_ent: f64,
    pub sem_ent: Option<f64>,
    pub lohs_var: Option<f64>,
}

/// Token scores are averaged across generations; semantic entropy needs
/// cluster ids and LOHS variance needs at least two LOHS vectors.
pub fn post_generation_scores(gens: &[Generation]) -> Result<PostGenerationScores> {
    if gens.is_empty() {
        return Err(Error::Empty("generation list"));
    }
    let conf = gens.iter().map(token_confidence).collect::<Result<Vec<_>>>()?;
    let tok_prob = conf.iter().map(|c| c.tok_prob).sum::<f64>() / conf.len() as f64;
    let tok_ent = conf.iter().map(|c| c.tok_ent).sum::<f64>() / conf.len() as f64;
    let clusters: Option<Vec<u32>> = gens.iter().map(|g| g.cluster).collect();
    let sem_ent = clusters.map(|c| semantic_entropy(&c)).transpose()?;
    let lohs: Vec<&[f64]> = gens.iter().filter_map(|g| g.lohs.as_deref()).collect();
    let lohs_var = if lohs.len() >= 2 { Some(lohs_variance(&VectorSet::from_rows(&lohs)?)?) } else { None };
    Ok(PostGenerationScores { tok_prob, tok_ent, sem_ent, lohs_var })
}

/// Baseline metrics and how each maps onto the failure-suspicious
/// orientation used by evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Sll,
    Mdsa,
    TokProb,
    TokEnt,
    SemEnt,
    LohsVar,
}

impl BaselineKind {
    /// `+1` when higher raw values already mean "more likely to fail".
    pub fn orientation(self) -> f64 {
        match self {
            BaselineKind::Sll | BaselineKind::TokProb => -1.0,
            BaselineKind::Mdsa | BaselineKind::TokEnt | BaselineKind::SemEnt | BaselineKind::LohsVar => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Sll => "sll",
            BaselineKind::Mdsa => "mdsa",
            BaselineKind::TokProb => "tok_prob",
            BaselineKind::TokEnt => "tok_ent",
            BaselineKind::SemEnt => "sem_ent",
            BaselineKind::LohsVar => "lohs_var",
        }
    }
}

/// Inputs with pass rate at or below this fail eight or more times out of ten.
pub const HIGH_FAILURE_MAX_PASS_RATE: f64 = 0.2;

pub fn high_failure_mask(pass_rates: &[f64], max_pass_rate: f64) -> Vec<bool> {
    pass_rates.iter().map(|&r| r <= max_pass_rate + 1e-12).collect()
}

/// Venn-cell counts of which metrics flag each high-failure input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileOverlap {
    pub names: Vec<String>,
    pub high_failure: usize,
    /// Inputs flagged by each metric.
    pub flagged: Vec<usize>,
    /// Bitmask over `names` (bit i = metric i) to the number of inputs
    /// flagged by exactly that set of metrics. Only non-empty masks appear.
    pub cells: BTreeMap<u32, usize>,
}

impl QuartileOverlap {
    pub fn union(&self) -> usize {
        self.cells.values().sum()
    }
}

/// Linear-interpolated empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Restricts to inputs in `high_failure`, flags for each metric the inputs
/// whose score is strictly above the `1 - top_fraction` quantile of that
/// metric on the restricted set, and counts every intersection region.
pub fn quartile_overlap(
    score_sets: &[(String, Vec<f64>)],
    high_failure: &[bool],
    top_fraction: f64,
) -> Result<QuartileOverlap> {
    if !(top_fraction > 0.0 && top_fraction < 1.0) {
        return Err(Error::Config { field: "top_fraction", reason: "must lie in (0, 1)".into() });
    }
    if score_sets.is_empty() || score_sets.len() > 31 {
        return Err(Error::Config { field: "score_sets", reason: "need 1 to 31 metrics".into() });
    }
    for (_, s) in score_sets {
        if s.len() != high_failure.len() {
            return Err(Error::LengthMismatch { left: s.len(), right: high_failure.len() });
        }
    }
    let keep: Vec<usize> = (0..high_failure.len()).filter(|&i| high_failure[i]).collect();
    if keep.is_empty() {
        return Err(Error::Empty("high-failure set"));
    }
    let mut masks = alloc::vec![0u32; keep.len()];
    let mut flagged = Vec::with_capacity(score_sets.len());
    for (m, (_, scores)) in score_sets.iter().enumerate() {
        let sub: Vec<f64> = keep.iter().map(|&i| scores[i]).collect();
        let mut sorted = sub.clone();
        sorted.sort_by(f64::total_cmp);
        let cut = quantile_sorted(&sorted, 1.0 - top_fraction);
        let mut count = 0;
        for (mask, s) in masks.iter_mut().zip(&sub) {
            if *s > cut {
                *mask |= 1 << m;
                count += 1;
            }
        }
        flagged.push(count);
    }
    let mut cells = BTreeMap::new();
    for mask in masks.into_iter().filter(|m| *m != 0) {
        *cells.entry(mask).or_default() += 1;
    }
    Ok(QuartileOverlap {
        names: score_sets.iter().map(|(n, _)| n.clone()).collect(),
        high_failure: keep.len(),
        flagged,
        cells,
    })
}

//! Evaluation of adequacy scores against observed pass rates.
//!
//! Orientation used throughout: a score is "failure-suspicious", higher
//! means more likely to fail (LSA is used as-is). The positive class for
//! ROC-AUC and failure@N is "failing".

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(row) => Err(Error::NonFinite { row }),
        None => Ok(()),
    }
}

/// 1-based ranks with ties sharing their mean rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        // positions i..=j share ranks i+1..=j+1
        let r = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with mean ranks for ties. Constant input on
/// either side is an error, never a silent zero.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::TooFewRows { needed: 2, got: a.len() });
    }
    check_finite(a)?;
    check_finite(b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Probability that a random failing input outscores a random passing one,
/// ties counting one half.
pub fn roc_auc(scores: &[f64], fail: &[bool]) -> Result<f64> {
    if scores.len() != fail.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: fail.len() });
    }
    check_finite(scores)?;
    let nf = fail.iter().filter(|f| **f).count();
    let np = fail.len() - nf;
    if nf == 0 || np == 0 {
        return Err(Error::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(fail).filter(|(_, f)| **f).map(|(r, _)| r).sum();
    let u = rank_sum - (nf * (nf + 1)) as f64 / 2.0;
    Ok(u / (nf as f64 * np as f64))
}

/// Mann-Whitney U statistic of `a` over `b` and its two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub u: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

/// Both samples at or below this size use the exact permutation
/// distribution.
pub const EXACT_MWU_LIMIT: usize = 8;

/// `U` counts pairs with `a_i > b_j` (ties one half). The p-value is exact
/// for small samples and otherwise uses the normal approximation with tie
/// and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("mann-whitney sample"));
    }
    check_finite(a)?;
    check_finite(b)?;
    let na = a.len();
    let nb = b.len();
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let offset = (na * (na + 1)) as f64 / 2.0;
    let u = ranks[..na].iter().sum::<f64>() - offset;
    let mu = (na * nb) as f64 / 2.0;

    if na <= EXACT_MWU_LIMIT && nb <= EXACT_MWU_LIMIT {
        let observed = (u - mu).abs();
        let (mut extreme, mut total) = (0u64, 0u64);
        for_each_combination(na + nb, na, |subset| {
            let us = subset.iter().map(|&i| ranks[i]).sum::<f64>() - offset;
            total += 1;
            if (us - mu).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        });
        let p = (extreme as f64 / total as f64).min(1.0);
        return Ok(MannWhitney { u, p_two_sided: p, exact: true });
    }

    let n = (na + nb) as f64;
    let mut tie_term = 0.0;
    let mut sorted = pooled;
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        libm::erfc(z / core::f64::consts::SQRT_2).min(1.0)
    };
    Ok(MannWhitney { u, p_two_sided: p, exact: false })
}

fn for_each_combination<F: FnMut(&[usize])>(n: usize, k: usize, mut f: F) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Number of failing inputs among the first `n` of a ranking, given the
/// fail flags in rank order.
pub fn failure_at_n(ranked_fail: &[bool], n: usize) -> Result<usize> {
    if n > ranked_fail.len() {
        return Err(Error::CutoffOutOfRange { n, len: ranked_fail.len() });
    }
    Ok(ranked_fail[..n].iter().filter(|f| **f).count())
}

/// Average percentage of faults detected, from fail flags in rank order.
/// `1 - Σ positions/(n·m) + 1/(2n)` with 1-based positions.
pub fn apfd_from_flags(ranked_fail: &[bool]) -> Result<f64> {
    let n = ranked_fail.len();
    let positions: Vec<usize> =
        ranked_fail.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i + 1).collect();
    let m = positions.len();
    if m == 0 {
        return Err(Error::Empty("failing inputs"));
    }
    let sum: usize = positions.iter().sum();
    Ok(1.0 - sum as f64 / (n * m) as f64 + 1.0 / (2 * n) as f64)
}

/// APFD of a ranking of ids against a set of failing ids.
pub fn apfd<S: AsRef<str>, T: AsRef<str>>(ranked: &[S], fails: &[T]) -> Result<f64> {
    let position: BTreeMap<&str, usize> =
        ranked.iter().enumerate().map(|(i, id)| (id.as_ref(), i)).collect();
    let mut flags = vec![false; ranked.len()];
    for f in fails {
        let p = position.get(f.as_ref()).ok_or_else(|| Error::UnknownId(f.as_ref().into()))?;
        flags[*p] = true;
    }
    apfd_from_flags(&flags)
}

/// Indices of `scores` sorted by descending score, ties broken by
/// ascending id.
pub fn rank_desc<S: AsRef<str>>(ids: &[S], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].total_cmp(&scores[a]).then_with(|| ids[a].as_ref().cmp(ids[b].as_ref()))
    });
    order
}

/// One scored input with its observed pass rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: String,
    /// Failure-suspicious score (higher = more likely to fail).
    pub score: f64,
    pub pass_rate: f64,
}

impl ScoredItem {
    pub fn is_pass(&self) -> bool {
        self.pass_rate > 0.5
    }
}

/// Default failure@N cutoffs.
pub const DEFAULT_CUTOFFS: [usize; 3] = [100, 300, 500];

/// All metrics of this module over one scored, labelled set. Metrics that
/// are undefined on the set (single class, constant input) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub n_fail: usize,
    /// Spearman between predicted likelihood (`-score`) and pass rate.
    pub spearman: Option<f64>,
    pub roc_auc: Option<f64>,
    /// Failing scores against passing scores.
    pub mann_whitney: Option<MannWhitney>,
    /// `(N, failures among top N)` for every cutoff not exceeding `n`.
    pub failure_at: Vec<(usize, usize)>,
    pub apfd: Option<f64>,
    /// Ids in prioritisation order.
    pub ranking: Vec<String>,
}

pub fn evaluate(items: &[ScoredItem], cutoffs: &[usize]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Empty("scored set"));
    }
    for it in items {
        if !(0.0..=1.0).contains(&it.pass_rate) {
            return Err(Error::InvalidPassRate(it.pass_rate));
        }
    }
    let ids: Vec<&str> = items.iter().map(|i| i.id.as_str()).collect();
    let scores: Vec<f64> = items.iter().map(|i| i.score).collect();
    check_finite(&scores)?;
    let fail: Vec<bool> = items.iter().map(|i| !i.is_pass()).collect();
    let order = rank_desc(&ids, &scores);
    let ranked_fail: Vec<bool> = order.iter().map(|&i| fail[i]).collect();

    let likelihood: Vec<f64> = scores.iter().map(|s| -s).collect();
    let rates: Vec<f64> = items.iter().map(|i| i.pass_rate).collect();
    let fail_scores: Vec<f64> = items.iter().filter(|i| !i.is_pass()).map(|i| i.score).collect();
    let pass_scores: Vec<f64> = items.iter().filter(|i| i.is_pass()).map(|i| i.score).collect();

    let mut failure_at = Vec::new();
    for &c in cutoffs {
        if c <= items.len() {
            failure_at.push((c, failure_at_n(&ranked_fail, c)?));
        }
    }
    Ok(EvalReport {
        n: items.len(),
        n_fail: fail_scores.len(),
        spearman: spearman(&likelihood, &rates).ok(),
        roc_auc: roc_auc(&scores, &fail).ok(),
        mann_whitney: mann_whitney_u(&fail_scores, &pass_scores).ok(),
        failure_at,
        apfd: apfd_from_flags(&ranked_fail).ok(),
        ranking: order.iter().map(|&i| items[i].id.clone()).collect(),
    })
}

/// Result of scoring with one model and labelling with another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub report: EvalReport,
    /// Scored ids with no pass rate on the target side.
    pub unmatched_scores: Vec<String>,
    /// Labelled ids that were never scored.
    pub unmatched_labels: Vec<String>,
}

/// Joins source-model scores with target-model pass rates on id and
/// evaluates every metric on the intersection.
pub fn transfer_eval(
    scores: &[(String, f64)],
    pass_rates: &[(String, f64)],
    cutoffs: &[usize],
) -> Result<TransferReport> {
    let rates: BTreeMap<&str, f64> = pass_rates.iter().map(|(id, r)| (id.as_str(), *r)).collect();
    let scored: BTreeSet<&str> = scores.iter().map(|(id, _)| id.as_str()).collect();
    let mut items = Vec::new();
    let mut unmatched_scores = Vec::new();
    for (id, s) in scores {
        match rates.get(id.as_str()) {
            Some(&r) => items.push(ScoredItem { id: id.clone(), score: *s, pass_rate: r }),
            None => unmatched_scores.push(id.clone()),
        }
    }
    if items.is_empty() {
        return Err(Error::Empty("intersection of scored and labelled ids"));
    }
    let unmatched_labels =
        rates.keys().filter(|id| !scored.contains(*id)).map(|id| String::from(*id)).collect();
    Ok(TransferReport { report: evaluate(&items, cutoffs)?, unmatched_scores, unmatched_labels })
}

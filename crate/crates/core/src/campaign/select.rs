//! Batch selection: responsibility-entropy exploitation, greedy max-min
//! exploration and uniform random sampling.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

use super::{CampaignState, DistanceSpace};
use crate::{Dataset, Result, VectorSet};

pub(super) fn exploit_scores(state: &CampaignState, data: &Dataset) -> Result<BTreeMap<String, f64>> {
    let ids: Vec<&String> = state.pool().iter().collect();
    let z = state.project_ids(data, &ids)?;
    let gmm = state.gmm();
    ids.iter()
        .zip(z.iter_rows())
        .map(|(id, row)| Ok(((*id).clone(), gmm.responsibility_entropy(row)?)))
        .collect()
}

/// The `n` highest-scoring ids, ties broken by ascending id.
pub(super) fn top_by_score(scores: &BTreeMap<String, f64>, n: usize) -> Vec<String> {
    let ids: Vec<&String> = scores.keys().collect();
    let values: Vec<f64> = scores.values().copied().collect();
    crate::metrics::rank_desc(&ids, &values).into_iter().take(n).map(|i| ids[i].clone()).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn vectors_in_space<S: AsRef<str>>(state: &CampaignState, data: &Dataset, ids: &[S]) -> Result<VectorSet> {
    match state.config().explore_space {
        DistanceSpace::Projected => state.project_ids(data, ids),
        DistanceSpace::Raw => data.gather(ids),
    }
}

pub(super) fn select_explore(
    state: &CampaignState,
    data: &Dataset,
    count: usize,
    already_chosen: &[String],
) -> Result<Vec<String>> {
    let excluded: BTreeSet<&str> = already_chosen.iter().map(String::as_str).collect();
    let candidates: Vec<&String> = state.pool().iter().filter(|id| !excluded.contains(id.as_str())).collect();
    let count = count.min(candidates.len());
    if count == 0 {
        return Ok(Vec::new());
    }
    let anchors: Vec<&String> = state.reference().keys().chain(already_chosen).collect();
    let cand = vectors_in_space(state, data, &candidates)?;
    let anch = vectors_in_space(state, data, &anchors)?;

    let mut min_d: Vec<f64> = cand
        .iter_rows()
        .map(|c| anch.iter_rows().map(|a| sq_dist(c, a)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut taken = alloc::vec![false; candidates.len()];
    let mut picks = Vec::with_capacity(count);
    for _ in 0..count {
        // Candidates are in id order, so a strict comparison keeps the
        // smallest id among equally distant ones.
        let mut best: Option<usize> = None;
        for (i, &d) in min_d.iter().enumerate() {
            if !taken[i] && best.is_none_or(|b| d > min_d[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        taken[b] = true;
        picks.push(candidates[b].clone());
        let chosen = cand.row(b);
        for (i, row) in cand.iter_rows().enumerate() {
            if !taken[i] {
                min_d[i] = min_d[i].min(sq_dist(row, chosen));
            }
        }
    }
    Ok(picks)
}

/// Uniform sample of `n` ids without replacement, in draw order.
pub(super) fn random_subset(pool: &BTreeSet<String>, n: usize, seed: u64) -> Vec<String> {
    let mut ids: Vec<&String> = pool.iter().collect();
    let n = n.min(ids.len());
    let mut rng = crate::seed::rng(seed);
    for i in 0..n {
        let j = rng.random_range(i..ids.len());
        ids.swap(i, j);
    }
    ids.into_iter().take(n).cloned().collect()
}

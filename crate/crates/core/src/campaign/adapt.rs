//! Model refitting and adaptation of the latent dimension `d` (by
//! cross-validated rank correlation) and the component count `K` (by
//! component perplexity).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::{pass_ids, CampaignState};
use crate::gmm::{fit_gmm_with, GmmModel, GmmOptions};
use crate::metrics::spearman;
use crate::pca::{fit_pca, PcaProjection};
use crate::{Dataset, Error, Result, RunOutcomes, VectorSet};

const TAG_FIT: u64 = super::TAG_FIT;
const TAG_CV: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Fitted {
    pub pca: PcaProjection,
    pub gmm: GmmModel,
}

pub(super) struct Outcome {
    pub k: usize,
    pub d: usize,
    pub cv_score: Option<f64>,
    pub cv_skipped: bool,
    pub perplexity: Option<f64>,
    pub model: Fitted,
}

/// PCA with `d` clipped to what the rows support, falling back to the
/// achievable rank on degenerate data.
fn fit_pca_clamped(x: &VectorSet, d: usize) -> Result<PcaProjection> {
    if x.rows() < 2 {
        return Err(Error::TooFewRows { needed: 2, got: x.rows() });
    }
    let d = d.clamp(1, x.cols().min(x.rows() - 1));
    match fit_pca(x, d) {
        Err(Error::RankDeficient { rank }) if rank >= 1 => fit_pca(x, rank),
        r => r,
    }
}

fn fit_on(x: &VectorSet, pca: PcaProjection, k: usize, seed: u64, opts: &GmmOptions) -> Result<Fitted> {
    let z = pca.project_set(x)?;
    let gmm = fit_gmm_with(&z, k.clamp(1, z.rows()), seed, opts)?;
    Ok(Fitted { pca, gmm })
}

/// Fits projection and mixture on the given passing references.
pub(super) fn fit_reference(
    data: &Dataset,
    pass: &[String],
    d: usize,
    k: usize,
    seed: u64,
    opts: &GmmOptions,
) -> Result<Fitted> {
    let x = data.gather(pass)?;
    let pca = fit_pca_clamped(&x, d)?;
    fit_on(&x, pca, k, seed, opts)
}

/// Candidate dimensions around `d`, clipped to `[d_min, upper]` (or all to
/// `upper` when it is below `d_min`), deduplicated and ascending.
pub(crate) fn d_candidates(d: usize, step: usize, d_min: usize, upper: usize) -> Vec<usize> {
    let clip = |v: usize| if upper < d_min { upper } else { v.clamp(d_min, upper) };
    let mut c: Vec<usize> = [d.saturating_sub(step), d, d + step].into_iter().map(clip).filter(|&v| v >= 1).collect();
    c.sort_unstable();
    c.dedup();
    c
}

/// The perplexity rule: shrink `K` when the mixture uses few of its
/// components, grow it when it uses nearly all of them.
pub(crate) fn next_k(perplexity: f64, k: usize, low: f64, high: f64, k_min: usize, k_max: usize) -> usize {
    let kf = k as f64;
    let next = if perplexity < low * kf {
        k.saturating_sub(1)
    } else if perplexity > high * kf {
        k + 1
    } else {
        k
    };
    next.clamp(k_min, k_max)
}

/// Seeded partition of `ids` into `folds` groups of near-equal size.
fn partition(ids: &[&String], folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut crate::seed::rng(seed));
    let mut fold = alloc::vec![0; ids.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

struct CvResult {
    scores: Vec<Option<f64>>,
}

fn cross_validate(
    data: &Dataset,
    reference: &BTreeMap<String, RunOutcomes>,
    candidates: &[usize],
    k: usize,
    folds: usize,
    seed: u64,
    opts: &GmmOptions,
) -> Result<CvResult> {
    let ids: Vec<&String> = reference.keys().collect();
    let fold_of = partition(&ids, folds, seed);
    let max_d = candidates.iter().copied().max().unwrap_or(1);
    let mut sums = alloc::vec![(0.0, 0usize); candidates.len()];
    for f in 0..folds {
        let mut train = Vec::new();
        let mut held = Vec::new();
        let mut held_rate = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            let label = reference[*id].label()?;
            if fold_of[i] == f {
                held.push(*id);
                held_rate.push(label.pass_rate);
            } else if label.is_pass {
                train.push(*id);
            }
        }
        if train.len() < 2 || held.len() < 2 {
            continue;
        }
        let x = data.gather(&train)?;
        let xh = data.gather(&held)?;
        let Ok(full) = fit_pca_clamped(&x, max_d) else { continue };
        for (c, &d) in candidates.iter().enumerate() {
            let Ok(pca) = full.truncated(d.min(full.dim)) else { continue };
            let Ok(model) = fit_on(&x, pca, k, crate::seed::derive(seed, &[f as u64, d as u64]), opts) else {
                continue;
            };
            let dens = model.gmm.log_densities(&model.pca.project_set(&xh)?)?;
            if let Ok(rho) = spearman(&dens, &held_rate) {
                sums[c].0 += rho;
                sums[c].1 += 1;
            }
        }
    }
    Ok(CvResult { scores: sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect() })
}

/// Adapts `d` and `K` (when the preset allows) against `reference` and
/// refits on its passing members. Does not touch `state`.
pub(super) fn adapt_and_refit(
    state: &CampaignState,
    data: &Dataset,
    reference: &BTreeMap<String, RunOutcomes>,
    t: u32,
) -> Result<Outcome> {
    let cfg = state.config();
    let (mut k, mut d) = state.targets();
    let pass = pass_ids(reference);
    if pass.len() < 2 {
        return Err(Error::CannotBootstrap { passing: pass.len() });
    }
    let perplexity = state.gmm().perplexity();
    let mut cv_score = None;
    let mut cv_skipped = false;

    if cfg.adapts() {
        let upper = data.dim().min(pass.len() - 1);
        let candidates = d_candidates(d, cfg.d_step, cfg.d_min, upper);
        let current = if upper < cfg.d_min { upper } else { d.clamp(cfg.d_min, upper) };
        let seed = crate::seed::derive(cfg.seed, &[u64::from(t), TAG_CV]);
        let cv = cross_validate(data, reference, &candidates, k, cfg.cv_folds, seed, &cfg.gmm)?;
        let mut best: Option<(usize, f64)> = None;
        for (&c, score) in candidates.iter().zip(&cv.scores) {
            let Some(s) = *score else { continue };
            let better = match best {
                None => true,
                // Candidates ascend, so on equal scores only the current
                // value may displace a smaller one.
                Some((b, bs)) => s > bs || (s == bs && c == current && b != current),
            };
            if better {
                best = Some((c, s));
            }
        }
        match best {
            Some((c, s)) => {
                d = c;
                cv_score = Some(s);
            }
            None => cv_skipped = true,
        }
        k = next_k(perplexity, state.gmm().k(), cfg.perplexity_low, cfg.perplexity_high, cfg.k_min, cfg.k_max);
    }

    let seed = crate::seed::derive(cfg.seed, &[u64::from(t), TAG_FIT]);
    let model = fit_reference(data, &pass, d, k, seed, &cfg.gmm)?;
    Ok(Outcome { k, d, cv_score, cv_skipped, perplexity: Some(perplexity), model })
}

//! Full-covariance Gaussian mixture fitted by expectation-maximisation.
//!
//! All density evaluation happens in log space. Each component keeps its
//! Cholesky factor, so a query costs one triangular solve per component.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky, log_det_from_cholesky, solve_lower};
use crate::{seed, Error, Result, VectorSet};

/// EM stopping rule and regularisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmOptions {
    /// Stop once the mean per-sample log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: u32,
    /// Diagonal load, relative to `trace(global covariance) / d`.
    pub reg_scale: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions { tol: 1e-3, max_iter: 500, reg_scale: 1e-6 }
    }
}

/// Bookkeeping from the EM run that produced a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FitMeta {
    /// Number of M-steps performed.
    pub iterations: u32,
    /// Mean per-sample log-likelihood of the final parameters.
    pub log_likelihood: f64,
    pub converged: bool,
    pub seed: u64,
    /// Components re-seeded after their responsibility mass collapsed.
    pub reseeds: u32,
    /// Mean log-likelihood after initialisation and after every kept M-step.
    #[serde(default)]
    pub trace: Vec<f64>,
    /// Indices into `trace` where an uninterrupted EM segment starts: 0 and
    /// the entry after every re-seed. Within a segment the trace never
    /// decreases.
    #[serde(default)]
    pub segment_starts: Vec<usize>,
    /// Mean log-likelihood of a final M-step that was discarded because the
    /// diagonal load made it lower the likelihood. The model keeps the
    /// parameters from before that step, and it is not part of `trace`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Component {
    weight: f64,
    log_weight: f64,
    mean: Vec<f64>,
    cov: Vec<f64>,
    chol: Vec<f64>,
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        let chol = cholesky(&cov, d).ok_or(Error::SingularCovariance)?;
        let log_norm = -0.5 * (d as f64 * (2.0 * PI).ln() + log_det_from_cholesky(&chol, d));
        let log_weight = if weight > 0.0 { weight.ln() } else { f64::NEG_INFINITY };
        Ok(Component { weight, log_weight, mean, cov, chol, log_norm })
    }

    fn log_pdf(&self, x: &[f64], buf: &mut [f64]) -> f64 {
        for ((b, xi), mi) in buf.iter_mut().zip(x).zip(&self.mean) {
            *b = xi - mi;
        }
        let d = self.mean.len();
        solve_lower(&self.chol, d, buf);
        let maha: f64 = buf.iter().map(|v| v * v).sum();
        self.log_norm - 0.5 * maha
    }
}

/// Serialised parameter form of a [`GmmModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub dim: usize,
    pub weights: Vec<f64>,
    /// `k x dim`, row-major.
    pub means: Vec<f64>,
    /// `k` stacked `dim x dim` matrices.
    pub covariances: Vec<f64>,
    pub fit_meta: FitMeta,
}

/// A fitted mixture. Immutable; safe to query from many threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmParams", into = "GmmParams")]
pub struct GmmModel {
    dim: usize,
    components: Vec<Component>,
    fit_meta: FitMeta,
}

impl TryFrom<GmmParams> for GmmModel {
    type Error = Error;
    fn try_from(p: GmmParams) -> Result<Self> {
        GmmModel::from_params(p)
    }
}

impl From<GmmModel> for GmmParams {
    fn from(m: GmmModel) -> Self {
        m.params()
    }
}

impl GmmModel {
    /// Rebuilds a model from raw parameters, validating shapes, the weight
    /// simplex and positive-definiteness.
    pub fn from_params(p: GmmParams) -> Result<Self> {
        let d = p.dim;
        let k = p.weights.len();
        if d == 0 {
            return Err(Error::ZeroColumns);
        }
        if k == 0 {
            return Err(Error::Empty("mixture weights"));
        }
        if p.means.len() != k * d {
            return Err(Error::LengthMismatch { left: p.means.len(), right: k * d });
        }
        if p.covariances.len() != k * d * d {
            return Err(Error::LengthMismatch { left: p.covariances.len(), right: k * d * d });
        }
        check_simplex(&p.weights, 1e-9)?;
        let components = (0..k)
            .map(|c| {
                Component::new(
                    p.weights[c],
                    p.means[c * d..(c + 1) * d].to_vec(),
                    p.covariances[c * d * d..(c + 1) * d * d].to_vec(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GmmModel { dim: d, components, fit_meta: p.fit_meta })
    }

    pub fn params(&self) -> GmmParams {
        GmmParams {
            dim: self.dim,
            weights: self.weights(),
            means: self.components.iter().flat_map(|c| c.mean.iter().copied()).collect(),
            covariances: self.components.iter().flat_map(|c| c.cov.iter().copied()).collect(),
            fit_meta: self.fit_meta.clone(),
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.components[k].mean
    }

    pub fn covariance(&self, k: usize) -> &[f64] {
        &self.components[k].cov
    }

    pub fn fit_meta(&self) -> &FitMeta {
        &self.fit_meta
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    fn log_joint(&self, x: &[f64], out: &mut [f64], buf: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.log_weight + c.log_pdf(x, buf);
        }
    }

    /// `log Σ_k w_k N(x; μ_k, Σ_k)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let mut joint = vec![0.0; self.k()];
        let mut buf = vec![0.0; self.dim];
        self.log_joint(x, &mut joint, &mut buf);
        Ok(log_sum_exp(&joint))
    }

    /// Log-density of every row of `x`.
    pub fn log_densities(&self, x: &VectorSet) -> Result<Vec<f64>> {
        if x.cols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.cols() });
        }
        let mut joint = vec![0.0; self.k()];
        let mut buf = vec![0.0; self.dim];
        Ok(x.iter_rows()
            .map(|r| {
                self.log_joint(r, &mut joint, &mut buf);
                log_sum_exp(&joint)
            })
            .collect())
    }

    /// Likelihood-based surprise: the negative log-density.
    pub fn lsa(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.log_density(x)?)
    }

    /// Posterior component probabilities for `x`. Always a valid simplex
    /// vector, even when every component density underflows.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut joint = vec![0.0; self.k()];
        let mut buf = vec![0.0; self.dim];
        self.log_joint(x, &mut joint, &mut buf);
        normalise_log(&mut joint);
        Ok(joint)
    }

    /// Shannon entropy (nats) of the responsibilities, in `[0, ln K]`.
    pub fn responsibility_entropy(&self, x: &[f64]) -> Result<f64> {
        let r = self.responsibilities(x)?;
        Ok(entropy(&r).clamp(0.0, (self.k() as f64).ln()))
    }

    /// Effective number of active components, `exp(H(w))`.
    pub fn perplexity(&self) -> f64 {
        let w = self.weights();
        entropy(&w).exp().clamp(1.0, self.k() as f64)
    }
}

/// `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn check_simplex(w: &[f64], tol: f64) -> Result<()> {
    if let Some(v) = w.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::NotSimplex(alloc::format!("entry {v} is not a non-negative number")));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::NotSimplex(alloc::format!("entries sum to {sum}")));
    }
    Ok(())
}

/// `exp(-Σ w_k ln w_k)` for a weight vector on the simplex; lies in `[1, K]`.
pub fn component_perplexity(w: &[f64]) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::Empty("weights"));
    }
    check_simplex(w, 1e-9)?;
    Ok(entropy(w).exp().clamp(1.0, w.len() as f64))
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

// Turns log joint probabilities into normalised probabilities in place.
fn normalise_log(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // Every component is out of reach; split evenly among the best.
        let ties = v.iter().filter(|x| **x == max).count().max(1) as f64;
        let all = ties as usize == v.len() || max.is_nan();
        v.iter_mut().for_each(|x| *x = if all || *x == max { 1.0 / ties } else { 0.0 });
        return;
    }
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// Fits a `k`-component full-covariance mixture with default options.
pub fn fit_gmm(x: &VectorSet, k: usize, seed: u64) -> Result<GmmModel> {
    fit_gmm_with(x, k, seed, &GmmOptions::default())
}

/// EM with k-means++ seeding, covariances initialised to the global sample
/// covariance and uniform weights. Deterministic for a given `(x, k, seed)`.
pub fn fit_gmm_with(x: &VectorSet, k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmModel> {
    let n = x.rows();
    let d = x.cols();
    if k == 0 {
        return Err(Error::Infeasible { rows: n, components: 0 });
    }
    if n < k {
        return Err(Error::Infeasible { rows: n, components: k });
    }
    let global_mean = x.mean();
    let global_cov = x.scatter(&global_mean, n as f64);
    let trace: f64 = (0..d).map(|i| global_cov[i * d + i]).sum();
    let eps = opts.reg_scale * trace / d as f64;
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::SingularCovariance);
    }
    let mut base_cov = global_cov;
    for i in 0..d {
        base_cov[i * d + i] += eps;
    }

    let mut rng = seed::rng(seed);
    let centres = kmeans_pp(x, k, &mut rng);
    let mut components = centres
        .iter()
        .map(|&i| Component::new(1.0 / k as f64, x.row(i).to_vec(), base_cov.clone()))
        .collect::<Result<Vec<_>>>()?;

    let mut resp = vec![0.0; n * k];
    let mut point_ll = vec![0.0; n];
    let mut ll = e_step(&components, x, &mut resp, &mut point_ll);
    let mut trace_ll = vec![ll];
    let mut segment_starts = vec![0];
    let mut iterations = 0u32;
    let mut converged = false;
    let mut reseeds = 0u32;
    let max_reseeds = 2 * k as u32;
    let mut rejected = None;

    while iterations < opts.max_iter {
        let before = components.clone();
        let reseeded = m_step(
            x,
            &resp,
            &point_ll,
            &mut components,
            &base_cov,
            eps,
            &mut reseeds,
            max_reseeds,
        )?;
        iterations += 1;
        let next = e_step(&components, x, &mut resp, &mut point_ll);
        if reseeded {
            trace_ll.push(next);
            segment_starts.push(trace_ll.len() - 1);
            ll = next;
            continue;
        }
        let improvement = next - ll;
        if improvement < 0.0 {
            // Only possible near convergence, so this is the last step anyway.
            components = before;
            rejected = Some(next);
            converged = true;
            break;
        }
        trace_ll.push(next);
        ll = next;
        if improvement < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(GmmModel {
        dim: d,
        components,
        fit_meta: FitMeta {
            iterations,
            log_likelihood: ll,
            converged,
            seed,
            reseeds,
            trace: trace_ll,
            segment_starts,
            rejected,
        },
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp<R: Rng>(x: &VectorSet, k: usize, rng: &mut R) -> Vec<usize> {
    let n = x.rows();
    let mut chosen = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    chosen.push(first);
    let mut dist: Vec<f64> = x.iter_rows().map(|r| sq_dist(r, x.row(first))).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &di) in dist.iter().enumerate() {
                if di <= 0.0 {
                    continue;
                }
                acc += di;
                pick = Some(i);
                if acc >= target {
                    break;
                }
            }
            pick.unwrap_or(0)
        } else {
            // All remaining points coincide with a centre.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (di, r) in dist.iter_mut().zip(x.iter_rows()) {
            *di = di.min(sq_dist(r, x.row(next)));
        }
    }
    chosen
}

// Fills responsibilities and per-point log-density; returns the mean
// log-likelihood.
fn e_step(components: &[Component], x: &VectorSet, resp: &mut [f64], point_ll: &mut [f64]) -> f64 {
    let k = components.len();
    let mut buf = vec![0.0; x.cols()];
    let mut total = 0.0;
    for (i, r) in x.iter_rows().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        for (o, c) in row.iter_mut().zip(components) {
            *o = c.log_weight + c.log_pdf(r, &mut buf);
        }
        let lse = log_sum_exp(row);
        point_ll[i] = lse;
        total += lse;
        normalise_log(row);
    }
    total / x.rows() as f64
}

// Standard M-step plus re-seeding of collapsed components. Returns whether
// any component was re-seeded.
#[allow(clippy::too_many_arguments)]
fn m_step(
    x: &VectorSet,
    resp: &[f64],
    point_ll: &[f64],
    components: &mut [Component],
    base_cov: &[f64],
    eps: f64,
    reseeds: &mut u32,
    max_reseeds: u32,
) -> Result<bool> {
    let n = x.rows();
    let d = x.cols();
    let k = components.len();
    let collapse_mass = 0.1; // 1/(10n) of the data, in units of points
    let mut mass = vec![0.0; k];
    for i in 0..n {
        for c in 0..k {
            mass[c] += resp[i * k + c];
        }
    }

    let collapsed: Vec<usize> = (0..k).filter(|&c| mass[c] < collapse_mass).collect();
    let reseed = !collapsed.is_empty() && *reseeds < max_reseeds;

    let mut new_weights = vec![0.0; k];
    let mut new_means = vec![vec![0.0; d]; k];
    let mut new_covs = vec![vec![0.0; d * d]; k];
    let mut centred = vec![0.0; d];
    for c in 0..k {
        if mass[c] <= f64::MIN_POSITIVE * 1e10 {
            // Nothing to estimate from; keep the old location.
            new_means[c].clone_from(&components[c].mean);
            new_covs[c].clone_from(&components[c].cov);
            new_weights[c] = 0.0;
            continue;
        }
        let mean = &mut new_means[c];
        for (i, r) in x.iter_rows().enumerate() {
            let w = resp[i * k + c];
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += w * v);
        }
        mean.iter_mut().for_each(|m| *m /= mass[c]);
        let cov = &mut new_covs[c];
        for (i, r) in x.iter_rows().enumerate() {
            let w = resp[i * k + c];
            if w == 0.0 {
                continue;
            }
            for ((ce, v), m) in centred.iter_mut().zip(r).zip(mean.iter()) {
                *ce = v - m;
            }
            for a in 0..d {
                let wa = w * centred[a];
                for b in 0..=a {
                    cov[a * d + b] += wa * centred[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[a * d + b] / mass[c];
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
            cov[a * d + a] += eps;
        }
        new_weights[c] = mass[c] / n as f64;
    }

    if reseed {
        // Re-seed at the points the current mixture explains worst.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| point_ll[a].total_cmp(&point_ll[b]).then(a.cmp(&b)));
        for (&c, &i) in collapsed.iter().zip(&order) {
            new_means[c] = x.row(i).to_vec();
            new_covs[c] = base_cov.to_vec();
            new_weights[c] = 1.0 / n as f64;
        }
        *reseeds += collapsed.len() as u32;
    }

    let sum: f64 = new_weights.iter().sum();
    for c in 0..k {
        let w = new_weights[c] / sum;
        let mean = core::mem::take(&mut new_means[c]);
        let cov = core::mem::take(&mut new_covs[c]);
        components[c] = Component::new(w, mean, cov)?;
    }
    Ok(reseed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn model_1d(weights: &[f64], means: &[f64], vars: &[f64]) -> GmmModel {
        GmmModel::from_params(GmmParams {
            dim: 1,
            weights: weights.to_vec(),
            means: means.to_vec(),
            covariances: vars.to_vec(),
            fit_meta: FitMeta::default(),
        })
        .unwrap()
    }

    #[test]
    fn standard_normal_at_zero() {
        let m = model_1d(&[1.0], &[0.0], &[1.0]);
        let ld = m.log_density(&[0.0]).unwrap();
        assert!((ld - (-0.918_938_533_204_672_7)).abs() < 1e-12);
        assert!((m.lsa(&[0.0]).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-12);
        assert_eq!(m.responsibilities(&[3.0]).unwrap(), vec![1.0]);
        assert_eq!(m.responsibility_entropy(&[3.0]).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_mixture() {
        let m = model_1d(&[0.5, 0.5], &[-2.0, 2.0], &[1.0, 1.0]);
        let a = m.log_density(&[-2.0]).unwrap();
        let b = m.log_density(&[2.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
        let r = m.responsibilities(&[0.0]).unwrap();
        assert_eq!(r, vec![0.5, 0.5]);
        assert!((m.responsibility_entropy(&[0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn far_points_never_nan() {
        let m = model_1d(&[0.5, 0.5], &[-1.0, 1.0], &[1e-3, 1e-3]);
        for x in [1e150, -1e150, 1e10] {
            let r = m.responsibilities(&[x]).unwrap();
            assert!(r.iter().all(|v| v.is_finite()));
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perplexity_values() {
        assert_eq!(component_perplexity(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!((component_perplexity(&[0.2; 5]).unwrap() - 5.0).abs() < 1e-12);
        let e = component_perplexity(&[0.7, 0.2, 0.1]).unwrap();
        let h: f64 = 0.7 * 0.7f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln();
        assert!((e - (-h).exp()).abs() < 1e-12, "{e}");
        assert!(matches!(component_perplexity(&[0.6, 0.6]), Err(Error::NotSimplex(_))));
        assert!(matches!(component_perplexity(&[1.2, -0.2]), Err(Error::NotSimplex(_))));
    }

    #[test]
    fn infeasible_component_count() {
        let x = VectorSet::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        assert_eq!(fit_gmm(&x, 4, 0).unwrap_err(), Error::Infeasible { rows: 3, components: 4 });
        assert!(fit_gmm(&x, 3, 0).is_ok());
    }

    #[test]
    fn identical_points_are_singular() {
        let x = VectorSet::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(fit_gmm(&x, 1, 0).unwrap_err(), Error::SingularCovariance);
    }

    #[test]
    fn dimension_checks() {
        let m = model_1d(&[1.0], &[0.0], &[1.0]);
        assert!(matches!(m.log_density(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }
}

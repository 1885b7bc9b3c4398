//! Synthetic latent worlds: multi-cluster Gaussian geographies with known
//! per-input pass probabilities, embedded into a higher-dimensional raw
//! space. They stand in for LLM hidden states when exercising the pipeline.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::campaign::{Label, LabelOracle};
use crate::dataset::DEFAULT_RUNS;
use crate::linalg::{cholesky, solve_lower};
use crate::{seed, Dataset, Error, InputRecord, Result, RunOutcomes, Split, VectorSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub mean: Vec<f64>,
    /// Full covariance; when absent the cluster is isotropic with `spread`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default = "one")]
    pub spread: f64,
    pub weight: f64,
    pub pass_prob: f64,
}

/// Scattered points far from every cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundSpec {
    /// Fraction of the pool drawn from the background.
    pub fraction: f64,
    pub pass_prob: f64,
    /// Standard deviation of the isotropic background around the centroid
    /// of the cluster means.
    pub spread: f64,
    /// Minimum Mahalanobis distance from every cluster.
    pub min_distance: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        BackgroundSpec { fraction: 0.0, pass_prob: 0.0, spread: 10.0, min_distance: 3.0 }
    }
}

fn one() -> f64 {
    1.0
}

fn default_refs() -> usize {
    10
}

fn default_noise() -> f64 {
    0.01
}

fn default_runs() -> u32 {
    DEFAULT_RUNS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub latent_dim: usize,
    pub raw_dim: usize,
    pub n_points: usize,
    pub clusters: Vec<ClusterSpec>,
    #[serde(default)]
    pub background: BackgroundSpec,
    /// Extra known-passing inputs marked as the initial reference set.
    #[serde(default = "default_refs")]
    pub initial_references: usize,
    /// Isotropic raw-space noise, relative to the latent signal scale.
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    #[serde(default = "default_runs")]
    pub runs_per_input: u32,
}

/// Hidden per-input truth. Never reachable through the [`Dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub pass_prob: BTreeMap<String, f64>,
    /// Cluster index, `None` for background points.
    pub cluster: BTreeMap<String, Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSample {
    pub dataset: Dataset,
    pub truth: GroundTruth,
    /// Latent coordinates, rows aligned with the dataset matrix.
    pub latent: VectorSet,
}

struct PreparedCluster {
    mean: Vec<f64>,
    chol: Vec<f64>,
}

impl WorldSpec {
    fn prepare(&self) -> Result<Vec<PreparedCluster>> {
        let d = self.latent_dim;
        fn bad<T>(m: String) -> Result<T> {
            Err(Error::WorldSpec(m))
        }
        if d == 0 {
            return bad("latent_dim must be at least 1".into());
        }
        if self.raw_dim < d {
            return bad(format!("raw_dim {} is smaller than latent_dim {d}", self.raw_dim));
        }
        if self.clusters.is_empty() {
            return bad("at least one cluster is required".into());
        }
        let wsum: f64 = self.clusters.iter().map(|c| c.weight).sum();
        if self.clusters.iter().any(|c| !(c.weight >= 0.0)) || (wsum - 1.0).abs() > 1e-9 {
            return bad(format!("cluster weights must be a probability vector (sum {wsum})"));
        }
        let bg = &self.background;
        let probs = self.clusters.iter().map(|c| c.pass_prob).chain([bg.pass_prob]);
        if probs.into_iter().any(|p| !(0.0..=1.0).contains(&p)) {
            return bad("pass probabilities must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&bg.fraction) || !(bg.spread > 0.0) || bg.min_distance < 0.0 {
            return bad("background fraction must lie in [0, 1] with positive spread".into());
        }
        if !(self.noise_scale >= 0.0) {
            return bad("noise_scale must be non-negative".into());
        }
        if self.runs_per_input == 0 {
            return bad("runs_per_input must be at least 1".into());
        }
        self.clusters
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if c.mean.len() != d {
                    return bad(format!("cluster {i}: mean has {} entries, expected {d}", c.mean.len()));
                }
                let cov: Vec<f64> = match &c.covariance {
                    Some(rows) => {
                        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                            return bad(format!("cluster {i}: covariance must be {d}x{d}"));
                        }
                        rows.iter().flatten().copied().collect()
                    }
                    None => {
                        let mut m = vec![0.0; d * d];
                        (0..d).for_each(|j| m[j * d + j] = c.spread * c.spread);
                        m
                    }
                };
                let symmetric = (0..d).all(|a| (0..a).all(|b| cov[a * d + b] == cov[b * d + a]));
                match cholesky(&cov, d) {
                    Some(chol) if symmetric => Ok(PreparedCluster { mean: c.mean.clone(), chol }),
                    _ => bad(format!("cluster {i}: covariance is not symmetric positive definite")),
                }
            })
            .collect()
    }
}

fn gaussian<R: Rng>(rng: &mut R, mean: &[f64], chol: &[f64]) -> Vec<f64> {
    let d = mean.len();
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    (0..d)
        .map(|i| mean[i] + (0..=i).map(|k| chol[i * d + k] * z[k]).sum::<f64>())
        .collect()
}

fn mahalanobis_sq(x: &[f64], c: &PreparedCluster) -> f64 {
    let mut buf: Vec<f64> = x.iter().zip(&c.mean).map(|(a, m)| a - m).collect();
    solve_lower(&c.chol, buf.len(), &mut buf);
    buf.iter().map(|v| v * v).sum()
}

/// `D x d` matrix with orthonormal columns, row-major.
fn random_embedding<R: Rng>(rng: &mut R, raw: usize, latent: usize) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(latent);
    while cols.len() < latent {
        let mut v: Vec<f64> = (0..raw).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    let mut q = vec![0.0; raw * latent];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..raw {
            q[i * latent + j] = c[i];
        }
    }
    q
}

const MAX_OUTLIER_ATTEMPTS: usize = 10_000;

/// Samples a world. Pool inputs get ids `x00000...`, initial references
/// `ref000...`; the matrix holds pool rows first.
pub fn generate_world(spec: &WorldSpec, world_seed: u64) -> Result<WorldSample> {
    let clusters = spec.prepare()?;
    let d = spec.latent_dim;
    let mut rng = seed::rng(seed::derive(world_seed, &[0x5759_4f52_4c44]));

    let weights: Vec<f64> = spec.clusters.iter().map(|c| c.weight).collect();
    let pick_cluster = |rng: &mut rand_chacha::ChaCha8Rng, eligible: &[bool]| -> usize {
        let total: f64 = weights.iter().zip(eligible).filter(|(_, e)| **e).map(|(w, _)| w).sum();
        let mut target = rng.random::<f64>() * total;
        let mut last = 0;
        for (i, w) in weights.iter().enumerate() {
            if !eligible[i] || *w <= 0.0 {
                continue;
            }
            last = i;
            if target < *w {
                return i;
            }
            target -= w;
        }
        last
    };
    let centroid: Vec<f64> = (0..d)
        .map(|j| spec.clusters.iter().map(|c| c.weight * c.mean[j]).sum())
        .collect();

    let mut latent: Vec<Vec<f64>> = Vec::with_capacity(spec.n_points + spec.initial_references);
    let mut ids = Vec::with_capacity(latent.capacity());
    let mut membership = Vec::with_capacity(latent.capacity());
    let all = vec![true; clusters.len()];
    for i in 0..spec.n_points {
        let background = rng.random::<f64>() < spec.background.fraction;
        if background {
            let min_sq = spec.background.min_distance * spec.background.min_distance;
            let mut attempts = 0;
            let point = loop {
                let p: Vec<f64> =
                    centroid.iter().map(|c| c + spec.background.spread * rng.sample::<f64, _>(StandardNormal)).collect();
                if clusters.iter().all(|c| mahalanobis_sq(&p, c) > min_sq) {
                    break p;
                }
                attempts += 1;
                if attempts >= MAX_OUTLIER_ATTEMPTS {
                    return Err(Error::WorldSpec(
                        "cannot place background points at the requested distance".into(),
                    ));
                }
            };
            latent.push(point);
            membership.push(None);
        } else {
            let c = pick_cluster(&mut rng, &all);
            latent.push(gaussian(&mut rng, &clusters[c].mean, &clusters[c].chol));
            membership.push(Some(c));
        }
        ids.push(format!("x{i:05}"));
    }

    let passing: Vec<bool> = spec.clusters.iter().map(|c| c.pass_prob > 0.5 && c.weight > 0.0).collect();
    if spec.initial_references > 0 && !passing.iter().any(|p| *p) {
        return Err(Error::WorldSpec("initial references need a cluster with pass_prob > 0.5".into()));
    }
    for i in 0..spec.initial_references {
        let c = pick_cluster(&mut rng, &passing);
        latent.push(gaussian(&mut rng, &clusters[c].mean, &clusters[c].chol));
        membership.push(Some(c));
        ids.push(format!("ref{i:03}"));
    }

    let n = latent.len();
    let raw_dim = spec.raw_dim;
    let q = random_embedding(&mut rng, raw_dim, d);
    let signal = if n > 0 {
        let mean: Vec<f64> = (0..d).map(|j| latent.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let ss: f64 = latent.iter().flat_map(|p| p.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m))).sum();
        (ss / (n * d) as f64).sqrt()
    } else {
        0.0
    };
    let noise_sd = spec.noise_scale * signal;
    let mut raw = Vec::with_capacity(n * raw_dim);
    for p in &latent {
        for r in 0..raw_dim {
            let v: f64 = (0..d).map(|j| q[r * d + j] * p[j]).sum();
            raw.push(v + noise_sd * rng.sample::<f64, _>(StandardNormal));
        }
    }

    let mut records = Vec::with_capacity(n);
    let mut outcomes = BTreeMap::new();
    let mut truth = GroundTruth { seed: world_seed, pass_prob: BTreeMap::new(), cluster: BTreeMap::new() };
    for (row, (id, c)) in ids.iter().zip(&membership).enumerate() {
        let split = if row >= spec.n_points { Split::InitialReference } else { Split::Pool };
        if split == Split::InitialReference {
            let runs = spec.runs_per_input;
            outcomes.insert(id.clone(), RunOutcomes { runs, passes: runs });
        }
        let p = match c {
            Some(c) => spec.clusters[*c].pass_prob,
            None => spec.background.pass_prob,
        };
        truth.pass_prob.insert(id.clone(), p);
        truth.cluster.insert(id.clone(), *c);
        records.push(InputRecord { id: id.clone(), row, text: None, split });
    }

    let vectors = VectorSet::new(n, raw_dim, raw)?;
    let latent = VectorSet::new(n, d, latent.into_iter().flatten().collect())?;
    Ok(WorldSample { dataset: Dataset::new(vectors, records, outcomes)?, truth, latent })
}

impl GroundTruth {
    /// Draws `passes ~ Binomial(runs, p)` with a stream seeded by
    /// `(world seed, id, runs)`, independent of labelling order.
    pub fn simulate_runs(&self, id: &str, runs: u32) -> Result<RunOutcomes> {
        let p = *self.pass_prob.get(id).ok_or_else(|| Error::UnknownId(id.into()))?;
        let mut rng = seed::rng(seed::derive_str(self.seed, id, &[u64::from(runs)]));
        let passes = Binomial::new(u64::from(runs), p)
            .map_err(|e| Error::WorldSpec(format!("{e}")))?
            .sample(&mut rng) as u32;
        Ok(RunOutcomes { runs, passes })
    }

    /// Pass rates of every input from one simulated round of `runs` runs.
    pub fn simulated_pass_rates(&self, runs: u32) -> Result<BTreeMap<String, f64>> {
        self.pass_prob
            .keys()
            .map(|id| {
                let o = self.simulate_runs(id, runs)?;
                Ok((id.clone(), o.passes as f64 / o.runs as f64))
            })
            .collect()
    }

    /// Truth for a different model on the same inputs: each probability is
    /// jittered by `N(0, jitter²)` and, with probability `flip`, mirrored
    /// to `1 - p`. The result has its own sampling seed.
    pub fn perturbed(&self, jitter: f64, flip: f64, perturb_seed: u64) -> GroundTruth {
        let mut rng = seed::rng(seed::derive(self.seed, &[perturb_seed, 0x5045_5254]));
        let pass_prob = self
            .pass_prob
            .iter()
            .map(|(id, &p)| {
                let mut q = (p + jitter * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0);
                if rng.random::<f64>() < flip {
                    q = 1.0 - q;
                }
                (id.clone(), q)
            })
            .collect();
        GroundTruth {
            seed: seed::derive(self.seed, &[perturb_seed]),
            pass_prob,
            cluster: self.cluster.clone(),
        }
    }
}

/// Label oracle answering from simulated runs.
#[derive(Debug, Clone)]
pub struct SimulatedOracle<'a> {
    pub truth: &'a GroundTruth,
    pub runs: u32,
}

impl LabelOracle for SimulatedOracle<'_> {
    fn label(&mut self, id: &str) -> core::result::Result<Label, String> {
        self.truth.simulate_runs(id, self.runs).map(Label::Outcome).map_err(|e| format!("{e}"))
    }
}

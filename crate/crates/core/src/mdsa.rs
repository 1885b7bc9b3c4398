//! Unimodal Mahalanobis-distance surprise baseline.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky, inverse_from_cholesky, solve_lower};
use crate::{Error, Result, VectorSet};

/// Mean and inverse covariance of a reference sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdsaParams", into = "MdsaParams")]
pub struct MdsaModel {
    mean: Vec<f64>,
    covariance: Vec<f64>,
    inverse_covariance: Vec<f64>,
    chol: Vec<f64>,
    /// Diagonal load that was needed to make the covariance invertible.
    regularisation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdsaParams {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
    pub regularisation: f64,
}

impl TryFrom<MdsaParams> for MdsaModel {
    type Error = Error;
    fn try_from(p: MdsaParams) -> Result<Self> {
        let d = p.mean.len();
        if p.covariance.len() != d * d {
            return Err(Error::LengthMismatch { left: p.covariance.len(), right: d * d });
        }
        let chol = cholesky(&p.covariance, d).ok_or(Error::SingularCovariance)?;
        Ok(MdsaModel {
            inverse_covariance: inverse_from_cholesky(&chol, d),
            mean: p.mean,
            covariance: p.covariance,
            chol,
            regularisation: p.regularisation,
        })
    }
}

impl From<MdsaModel> for MdsaParams {
    fn from(m: MdsaModel) -> Self {
        MdsaParams { mean: m.mean, covariance: m.covariance, regularisation: m.regularisation }
    }
}

/// Fits the unbiased sample mean and covariance of `x`.
///
/// The covariance is used as-is when it is positive definite; otherwise a
/// diagonal load of `1e-6 · trace/d` is added.
pub fn fit_mdsa(x: &VectorSet) -> Result<MdsaModel> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let d = x.cols();
    let mean = x.mean();
    let mut cov = x.scatter(&mean, (n - 1) as f64);
    let mut regularisation = 0.0;
    let chol = match cholesky(&cov, d) {
        Some(l) if well_conditioned(&l, d) => l,
        _ => {
            let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
            regularisation = 1e-6 * trace / d as f64;
            if !(regularisation > 0.0) {
                return Err(Error::SingularCovariance);
            }
            for i in 0..d {
                cov[i * d + i] += regularisation;
            }
            cholesky(&cov, d).ok_or(Error::SingularCovariance)?
        }
    };
    Ok(MdsaModel {
        inverse_covariance: inverse_from_cholesky(&chol, d),
        mean,
        covariance: cov,
        chol,
        regularisation,
    })
}

fn well_conditioned(l: &[f64], d: usize) -> bool {
    let diag: Vec<f64> = (0..d).map(|i| l[i * d + i]).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    // Pivot ratio squared approximates the condition number.
    min > 0.0 && (min / max).powi(2) > 1e-12
}

impl MdsaModel {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn inverse_covariance(&self) -> &[f64] {
        &self.inverse_covariance
    }

    pub fn regularisation(&self) -> f64 {
        self.regularisation
    }

    /// `sqrt((x-μ)ᵀ Σ⁻¹ (x-μ))`.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        let d = self.mean.len();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let mut buf: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        solve_lower(&self.chol, d, &mut buf);
        Ok(buf.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn distances(&self, x: &VectorSet) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.distance(r)).collect()
    }
}

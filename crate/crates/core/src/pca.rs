//! Principal component projection of hidden-state vectors.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::linalg::symmetric_eigen;
use crate::{Error, Result, VectorSet};

/// Eigenvalues at or below this fraction of the largest one count as zero
/// when deciding the achievable rank.
const RANK_TOLERANCE: f64 = 1e-10;

/// Orthonormal linear projection `x -> basis · (x - mean)`.
///
/// `basis` is `dim x input_dim`, row-major, rows ordered by decreasing
/// explained variance. Each row's largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    pub basis: Vec<f64>,
    pub dim: usize,
    pub input_dim: usize,
    /// Sample variances along each basis row.
    pub explained_variance: Vec<f64>,
}

/// Fits the top-`d` principal directions of `x`.
///
/// Requires `x.rows() >= 2` and `1 <= d <= min(D, rows - 1)`. Rank-deficient
/// data fails with [`Error::RankDeficient`] naming the achievable rank.
pub fn fit_pca(x: &VectorSet, d: usize) -> Result<PcaProjection> {
    let n = x.rows();
    let big_d = x.cols();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let max = big_d.min(n - 1);
    if d == 0 || d > max {
        return Err(Error::InvalidDimension { d, max });
    }
    let mean = x.mean();
    let denom = (n - 1) as f64;

    let (values, mut basis) = if big_d <= n {
        let cov = x.scatter(&mean, denom);
        let eig = symmetric_eigen(&cov, big_d);
        (eig.values, eig.vectors[..d * big_d].to_vec())
    } else {
        gram_route(x, &mean, d)
    };

    let top = values.first().copied().unwrap_or(0.0);
    let rank = if top > 0.0 {
        values.iter().filter(|&&v| v > top * RANK_TOLERANCE).count()
    } else {
        0
    };
    if rank < d {
        return Err(Error::RankDeficient { rank });
    }

    for row in basis.chunks_exact_mut(big_d) {
        fix_sign(row);
    }
    Ok(PcaProjection {
        mean,
        basis,
        dim: d,
        input_dim: big_d,
        explained_variance: values[..d].to_vec(),
    })
}

// When there are fewer samples than dimensions, diagonalise the n x n Gram
// matrix instead of the D x D covariance and map eigenvectors back.
fn gram_route(x: &VectorSet, mean: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows();
    let big_d = x.cols();
    let denom = (n - 1) as f64;
    let centred: Vec<f64> = x
        .iter_rows()
        .flat_map(|r| r.iter().zip(mean).map(|(v, m)| v - m))
        .collect();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        let ri = &centred[i * big_d..(i + 1) * big_d];
        for j in 0..=i {
            let rj = &centred[j * big_d..(j + 1) * big_d];
            let g = ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>() / denom;
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let eig = symmetric_eigen(&gram, n);
    let mut basis = vec![0.0; d * big_d];
    for k in 0..d {
        let u = &eig.vectors[k * n..(k + 1) * n];
        let row = &mut basis[k * big_d..(k + 1) * big_d];
        for (i, &ui) in u.iter().enumerate() {
            let ci = &centred[i * big_d..(i + 1) * big_d];
            for (b, c) in row.iter_mut().zip(ci) {
                *b += ui * c;
            }
        }
    }
    // Re-orthonormalise; mapping back loses accuracy on small eigenvalues.
    for k in 0..d {
        let (done, rest) = basis.split_at_mut(k * big_d);
        let row = &mut rest[..big_d];
        for prev in done.chunks_exact(big_d) {
            let dot: f64 = prev.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
            row.iter_mut().zip(prev).for_each(|(r, p)| *r -= dot * p);
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|r| *r /= norm);
        }
    }
    (eig.values, basis)
}

fn fix_sign(row: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in row.iter().enumerate() {
        if v.abs() > row[best].abs() {
            best = i;
        }
    }
    if row[best] < 0.0 {
        row.iter_mut().for_each(|v| *v = -*v);
    }
}

impl PcaProjection {
    /// Projects one raw vector into the latent space.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        let mut out = vec![0.0; self.dim];
        self.project_into(x, &mut out);
        Ok(out)
    }

    fn project_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(self.basis.chunks_exact(self.input_dim)) {
            *o = b.iter().zip(x).zip(&self.mean).map(|((b, x), m)| b * (x - m)).sum();
        }
    }

    /// Projects every row of `x`.
    pub fn project_set(&self, x: &VectorSet) -> Result<VectorSet> {
        if x.cols() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.cols() });
        }
        let mut data = vec![0.0; x.rows() * self.dim];
        for (r, out) in x.iter_rows().zip(data.chunks_exact_mut(self.dim)) {
            self.project_into(r, out);
        }
        VectorSet::new(x.rows(), self.dim, data)
    }

    /// The leading `d` directions of this projection; identical to refitting
    /// with `d` on the same data.
    pub fn truncated(&self, d: usize) -> Result<PcaProjection> {
        if d == 0 || d > self.dim {
            return Err(Error::InvalidDimension { d, max: self.dim });
        }
        Ok(PcaProjection {
            mean: self.mean.clone(),
            basis: self.basis[..d * self.input_dim].to_vec(),
            dim: d,
            input_dim: self.input_dim,
            explained_variance: self.explained_variance[..d].to_vec(),
        })
    }

    /// Maps a latent vector back into the raw space.
    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: z.len() });
        }
        let mut out = self.mean.clone();
        for (zk, b) in z.iter().zip(self.basis.chunks_exact(self.input_dim)) {
            out.iter_mut().zip(b).for_each(|(o, b)| *o += zk * b);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_line_captures_all_variance() {
        let rows: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let x = VectorSet::from_rows(&rows).unwrap();
        let p = fit_pca(&x, 1).unwrap();
        let total: f64 = {
            let c = x.scatter(&x.mean(), 5.0);
            c[0] + c[3]
        };
        assert!((p.explained_variance[0] - total).abs() < 1e-10);
        for r in x.iter_rows() {
            let back = p.reconstruct(&p.project(r).unwrap()).unwrap();
            assert!((back[0] - r[0]).abs() < 1e-10 && (back[1] - r[1]).abs() < 1e-10);
        }
        // Asking for a second direction exposes the true rank.
        let x3 = VectorSet::from_rows(&rows[..3]).unwrap();
        assert_eq!(fit_pca(&x3, 2).unwrap_err(), Error::RankDeficient { rank: 1 });
    }

    #[test]
    fn identical_rows_are_rank_zero() {
        let x = VectorSet::from_rows(&[[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert_eq!(fit_pca(&x, 1).unwrap_err(), Error::RankDeficient { rank: 0 });
    }

    #[test]
    fn dimension_bounds() {
        let x = VectorSet::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(fit_pca(&x, 0).unwrap_err(), Error::InvalidDimension { d: 0, max: 2 });
        assert_eq!(fit_pca(&x, 3).unwrap_err(), Error::InvalidDimension { d: 3, max: 2 });
        let one = VectorSet::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(fit_pca(&one, 1), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn project_mean_is_zero_and_identity_basis_truncates() {
        let p = PcaProjection {
            mean: vec![0.0; 3],
            basis: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            dim: 2,
            input_dim: 3,
            explained_variance: vec![1.0, 1.0],
        };
        assert_eq!(p.project(&[4.0, 5.0, 6.0]).unwrap(), vec![4.0, 5.0]);
        assert_eq!(p.project(&p.mean).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(p.project(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major matrix of hidden-state vectors, one row per input.
///
/// Invariants: `cols >= 1`, `data.len() == rows * cols`, every entry finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVectorSet")]
pub struct VectorSet {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawVectorSet {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawVectorSet> for VectorSet {
    type Error = Error;
    fn try_from(raw: RawVectorSet) -> Result<Self> {
        VectorSet::new(raw.rows, raw.cols, raw.data)
    }
}

impl VectorSet {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::ZeroColumns);
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::ShapeMismatch { rows, cols, len: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / cols });
        }
        Ok(VectorSet { rows, cols, data })
    }

    pub fn empty(cols: usize) -> Result<Self> {
        VectorSet::new(0, cols, Vec::new())
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).ok_or(Error::Empty("rows"))?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        VectorSet::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> VectorSet {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        VectorSet { rows: idx.len(), cols: self.cols, data }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &VectorSet) -> Result<VectorSet> {
        if other.cols != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, got: other.cols });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(VectorSet { rows: self.rows + other.rows, cols: self.cols, data })
    }

    /// Column means.
    pub fn mean(&self) -> Vec<f64> {
        let mut mean = alloc::vec![0.0; self.cols];
        if self.rows == 0 {
            return mean;
        }
        for r in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Covariance around `mean`, divided by `denom`. Returns a `cols x cols`
    /// symmetric matrix.
    pub fn scatter(&self, mean: &[f64], denom: f64) -> Vec<f64> {
        let d = self.cols;
        let mut cov = alloc::vec![0.0; d * d];
        let mut centred = alloc::vec![0.0; d];
        for r in self.iter_rows() {
            for ((c, v), m) in centred.iter_mut().zip(r).zip(mean) {
                *c = v - m;
            }
            for i in 0..d {
                let ci = centred[i];
                let row = &mut cov[i * d..i * d + i + 1];
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += ci * centred[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov[i * d + j] / denom;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        cov
    }
}

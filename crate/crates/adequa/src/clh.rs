//! The `CLH1` binary matrix format.
//!
//! Layout, all little-endian: the magic bytes `CLH1`, then version, rows
//! and cols as `u32`, then `rows * cols` `f32` values in row-major order.
//! Values are widened to `f64` on read.

use std::path::Path;

use adequa_core::VectorSet;

use crate::error::{write_atomic, Error, Result};

pub const MAGIC: [u8; 4] = *b"CLH1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClhError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("header needs {HEADER_LEN} bytes, file has {0}")]
    ShortHeader(usize),
    #[error("{rows}x{cols} overflows the addressable size")]
    Overflow { rows: u32, cols: u32 },
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
    #[error("matrix declares zero columns")]
    ZeroColumns,
    #[error("non-finite value in row {row}")]
    NonFinite { row: usize },
}

pub fn encode(m: &VectorSet) -> Result<Vec<u8>, ClhError> {
    let rows = u32::try_from(m.rows()).map_err(|_| ClhError::Overflow { rows: u32::MAX, cols: m.cols() as u32 })?;
    let cols = u32::try_from(m.cols()).map_err(|_| ClhError::Overflow { rows, cols: u32::MAX })?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(&MAGIC);
    for v in [VERSION, rows, cols] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (r, row) in m.iter_rows().enumerate() {
        for &v in row {
            let f = v as f32;
            if !f.is_finite() {
                return Err(ClhError::NonFinite { row: r });
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<VectorSet, ClhError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(ClhError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(ClhError::ShortHeader(bytes.len()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(ClhError::BadMagic(magic));
    }
    let version = word(4);
    if version != VERSION {
        return Err(ClhError::UnsupportedVersion(version));
    }
    let (rows, cols) = (word(8), word(12));
    if cols == 0 {
        return Err(ClhError::ZeroColumns);
    }
    let expected = (rows as usize)
        .checked_mul(cols as usize)
        .and_then(|n| n.checked_mul(4))
        .ok_or(ClhError::Overflow { rows, cols })?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(ClhError::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(ClhError::Trailing(payload.len() - expected));
    }
    let mut data = Vec::with_capacity(expected / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(ClhError::NonFinite { row: i / cols as usize });
        }
        data.push(f64::from(v));
    }
    Ok(VectorSet::new(rows as usize, cols as usize, data).expect("shape checked above"))
}

pub fn write_matrix(m: &VectorSet, path: &Path) -> Result<()> {
    let bytes = encode(m).map_err(|source| Error::Matrix { path: path.to_owned(), source })?;
    write_atomic(path, &bytes)
}

pub fn read_matrix(path: &Path) -> Result<VectorSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Matrix { path: path.to_owned(), source })
}

/// Rounds every entry to the nearest `f32`, which is what a write followed
/// by a read does.
pub fn to_storage_precision(m: &VectorSet) -> VectorSet {
    let data = m.as_slice().iter().map(|&v| f64::from(v as f32)).collect();
    VectorSet::new(m.rows(), m.cols(), data).expect("same shape")
}

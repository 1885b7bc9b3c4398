//! Numerical core of the adequa test-adequacy engine.
//!
//! Everything in this crate is pure computation over in-memory data and
//! builds without `std` (an allocator is required). File formats, the CLI
//! and the labelling service live in the companion `adequa` crate.
//!
//! The pipeline is: project hidden-state vectors with [`pca`], fit a
//! full-covariance mixture on the passing reference inputs with [`gmm`],
//! and score unseen inputs by their likelihood-based surprise
//! ([`gmm::GmmModel::lsa`]). The [`campaign`] module grows the reference
//! set by alternating entropy-driven exploitation with max-min exploration,
//! adapting the latent dimensionality and component count as labels arrive.

#![no_std]
// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod campaign;
pub mod dataset;
mod error;
pub mod gmm;
pub mod linalg;
pub mod mdsa;
pub mod metrics;
pub mod pca;
pub mod seed;
pub mod synth;
pub mod vectors;

pub use dataset::{aggregate_pass, Dataset, InputRecord, PassLabel, RunOutcomes, Split};
pub use error::{Error, ErrorKind, Result};
pub use gmm::{fit_gmm, GmmModel, GmmOptions};
pub use mdsa::{fit_mdsa, MdsaModel};
pub use pca::{fit_pca, PcaProjection};
pub use vectors::VectorSet;

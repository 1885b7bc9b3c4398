//! File formats, checkpoints, the command line and the labelling service
//! around `adequa-core`.

pub mod checkpoint;
pub mod clh;
pub mod cli;
pub mod config;
pub mod dump;
mod error;
pub mod labels;
pub mod manifest;
pub mod report;
pub mod service;

pub use error::{Error, Result};

//! TOML configuration and world-spec files.
//!
//! ```toml
//! seed = 7
//!
//! [campaign]
//! target_size = 500
//! batch_size = 10
//! alpha = 0.5
//!
//! [eval]
//! cutoffs = [100, 300, 500]
//!
//! [service]
//! addr = "127.0.0.1:8080"
//! ```
//!
//! Unknown keys are rejected with the path of the offending field.

use std::path::Path;

use adequa_core::campaign::CampaignConfig;
use adequa_core::metrics::DEFAULT_CUTOFFS;
use adequa_core::synth::WorldSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { cutoffs: DEFAULT_CUTOFFS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub addr: String,
    /// Static bearer token; requests must carry it when set.
    pub token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { addr: "127.0.0.1:8080".into(), token: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub campaign: CampaignConfig,
    pub eval: EvalConfig,
    pub service: ServiceConfig,
}

pub fn parse_toml<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::format(path, e.to_string().trim_end()))?;
    serde_path_to_error::deserialize(de).map_err(|e| Error::Field {
        path: path.to_owned(),
        field: e.path().to_string(),
        msg: e.inner().message().to_string(),
    })
}

impl FileConfig {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let cfg: FileConfig = parse_toml(path, text)?;
        cfg.campaign.validate().map_err(|e| match e {
            adequa_core::Error::Config { field, reason } => {
                Error::Field { path: path.to_owned(), field: format!("campaign.{field}"), msg: reason }
            }
            other => other.into(),
        })?;
        if cfg.eval.cutoffs.contains(&0) {
            let msg = "cutoffs must be positive".to_string();
            return Err(Error::Field { path: path.to_owned(), field: "eval.cutoffs".into(), msg });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_to_string(path)?)
    }
}

/// Reads a world spec. Structural problems surface when the world is
/// generated.
pub fn load_world_spec(path: &Path) -> Result<WorldSpec> {
    parse_toml(path, &read_to_string(path)?)
}

//! Campaign checkpoints: one JSON document holding the campaign record, the
//! fitted projection and mixture, and the manifest the campaign runs over.

use std::path::{Path, PathBuf};

use adequa_core::campaign::{CampaignRecord, CampaignState};
use adequa_core::{GmmModel, PcaProjection};
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_atomic, Error, Result};

pub const FORMAT: &str = "adequa-checkpoint";
pub const VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Manifest of the dataset the campaign runs over.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub record: CampaignRecord,
    pub pca: PcaProjection,
    pub gmm: GmmModel,
}

impl Checkpoint {
    pub fn new(state: &CampaignState, dataset: Option<&Path>) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            dataset: dataset.map(Path::to_owned),
            record: state.record().clone(),
            pca: state.pca().clone(),
            gmm: state.gmm().clone(),
        }
    }

    pub fn into_state(self) -> Result<CampaignState> {
        Ok(CampaignState::from_parts(self.record, self.pca, self.gmm)?)
    }
}

/// Accepts either a checkpoint file or a directory containing one.
pub fn resolve(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_owned()
    }
}

pub fn save(state: &CampaignState, dataset: Option<&Path>, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&Checkpoint::new(state, dataset)).expect("plain data");
    write_atomic(path, text.as_bytes())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let path = resolve(path);
    let text = read_to_string(&path)?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let ck: Checkpoint = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Field {
        path: path.clone(),
        field: e.path().to_string(),
        msg: e.into_inner().to_string(),
    })?;
    if ck.format != FORMAT || ck.version != VERSION {
        return Err(Error::format(&path, format!("not a version {VERSION} {FORMAT} file")));
    }
    Ok(ck)
}

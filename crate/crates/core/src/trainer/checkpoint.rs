use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Config;
use super::model::Model;
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::numcore::{ParamStore, Rng};

/// Everything needed to rebuild a model and resume training bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Canonical config text; `config_hash` is its SHA-256.
    pub config: String,
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ParamStore,
    pub optimizer: Adam,
    pub rng: Rng,
    pub dims: [usize; 3],
    pub class_names: Vec<String>,
    pub val_uar: f64,
}

impl Checkpoint {
    pub fn config(&self) -> Result<Config> {
        Config::parse(&self.config)
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(&self.config()?.train, self.dims, self.class_names.len())
    }

    /// Writes to a temporary sibling and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::format(path, format!("cannot encode checkpoint: {e}")))?;
        write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("bad checkpoint: {e}")))?;
        let cfg = ck
            .config()
            .map_err(|e| Error::format(path, format!("bad embedded config: {e}")))?;
        if cfg.hash() != ck.config_hash {
            return Err(Error::format(
                path,
                "config hash does not match the embedded config",
            ));
        }
        Ok(ck)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| Error::io(path, e))
}

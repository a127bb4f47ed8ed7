//! Versioned JSON parameter checkpoints. Floats are written in shortest
//! round-trip form and parsed exactly, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Transform};
use crate::table::Table;

pub const CHECKPOINT_FORMAT: &str = "qgcn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    #[serde(rename = "M")]
    pub users: usize,
    #[serde(rename = "N")]
    pub items: usize,
    pub embeddings: Table,
    pub transforms: Vec<Transform>,
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, params: &ModelParams) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            users: params.users,
            items: params.items,
            embeddings: params.embeddings.clone(),
            transforms: params.transforms.clone(),
        }
    }

    pub fn into_parts(self) -> Result<(ModelConfig, ModelParams)> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Input(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                self.format, self.version
            )));
        }
        self.config.validate()?;
        if self.embeddings.width() != self.config.embedding_width() {
            return Err(Error::Dimension("checkpoint embedding width disagrees with its config".into()));
        }
        let params = ModelParams::new(self.users, self.items, self.embeddings, self.transforms)?;
        Ok((self.config, params))
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, config: &ModelConfig, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(&Checkpoint::new(config, params))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, ModelParams)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text)?;
    checkpoint.into_parts()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Variant};

    #[test]
    fn rejects_foreign_format() {
        let cfg = ModelConfig {
            quaternion_dim: 1,
            ..ModelConfig::default()
        };
        let params = init_params(&cfg, 1, 1, 0).unwrap();
        let mut c = Checkpoint::new(&cfg, &params);
        c.version = 99;
        assert!(c.clone().into_parts().is_err());
        c.version = CHECKPOINT_VERSION;
        c.config.variant = Variant::Qgcn;
        c.config.quaternion_dim = 2;
        assert!(c.into_parts().is_err());
    }
}

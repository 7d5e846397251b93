//! Versioned JSON checkpoints tagged with the hash of the configuration that
//! fixes the network shapes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::policy::PolicyParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub env_steps: usize,
    pub params: PolicyParams,
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>, env_steps: usize, params: PolicyParams) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            env_steps,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Loads and checks version and config hash.
    pub fn load(path: &Path, expected_hash: &str) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        if ckpt.config_hash != expected_hash {
            return Err(Error::Config(format!(
                "checkpoint config hash {} does not match {expected_hash}",
                ckpt.config_hash
            )));
        }
        if !ckpt.params.is_finite() {
            return Err(Error::Numerical(
                "checkpoint holds non-finite parameters".into(),
            ));
        }
        Ok(ckpt)
    }
}

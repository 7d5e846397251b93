//! Run configuration file (TOML). Every section defaults to the simulation
//! parameters used throughout the crate, so an empty file is a complete config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cbf::CbfSettings;
use crate::dynamics::VehicleParams;
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::geometry::IntersectionConfig;
use crate::marl::PpoConfig;
use crate::rewards::RewardConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";
pub const VERSION_FILE: &str = "VERSION";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub map: IntersectionConfig,
    pub vehicle: VehicleParams,
    pub env: EnvConfig,
    pub cbf: CbfSettings,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs"),
            map: IntersectionConfig::default(),
            vehicle: VehicleParams::default(),
            env: EnvConfig::default(),
            cbf: CbfSettings::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.display().to_string()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.map.validate()?;
        self.vehicle.validate()?;
        self.env.validate()?;
        self.cbf.with_dt(self.env.dt).validate()?;
        self.reward.validate()?;
        self.ppo.validate()?;
        self.eval.validate()?;
        if self.reward.n_ref_points() != self.env.n_ref_points {
            return Err(Error::Config(format!(
                "reward.weights has {} entries but env.n_ref_points is {}",
                self.reward.n_ref_points(),
                self.env.n_ref_points
            )));
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<Environment> {
        Environment::new(&self.map, self.vehicle.clone(), self.env.clone(), self.cbf)
    }

    /// SHA-256 over the sections that fix observation and network shapes.
    pub fn config_hash(&self) -> Result<String> {
        let shape = serde_json::json!({
            "map": self.map,
            "vehicle": self.vehicle,
            "env": self.env,
            "hidden": self.ppo.hidden,
        });
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&shape)?)))
    }

    /// Writes the resolved config and the tool version into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESOLVED_CONFIG_FILE), self.to_toml_string()?)?;
        std::fs::write(dir.join(VERSION_FILE), format!("cbfrl {TOOL_VERSION}\n"))?;
        Ok(())
    }
}

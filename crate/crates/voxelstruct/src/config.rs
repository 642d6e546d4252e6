//! Merged run configuration: networks, training schedule, loss weights, and
//! dataset parameters, loadable from JSON with a content hash that stamps
//! every artifact a run produces.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::nets::NetConfig;
use crate::training::TrainConfig;

/// Dataset generation parameters (resolution and seed arrive via CLI flags).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub count: usize,
    pub test_frac: f64,
    pub annotated_frac: f64,
    pub hard: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            count: 250,
            test_frac: 0.2,
            annotated_frac: 0.24,
            hard: false,
        }
    }
}

/// Everything a run needs, with documented defaults for every field.
/// Unknown keys in a config file are a hard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; all RNG streams derive from it.
    pub seed: u64,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    /// Consistency kernel width in voxels; null selects the
    /// resolution-scaled default (2 voxels at D = 64, floor 1).
    pub consist_sigma: Option<f64>,
    /// Truncation radius in voxels; null selects 2 sigma.
    pub consist_trunc: Option<f64>,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        if let Some(s) = self.consist_sigma {
            if s <= 0.0 {
                return Err(Error::Config(format!("consist_sigma {s} must be positive")));
            }
        }
        if let Some(t) = self.consist_trunc {
            if t <= 0.0 {
                return Err(Error::Config(format!("consist_trunc {t} must be positive")));
            }
        }
        if self.data.count == 0 {
            return Err(Error::Config("data.count must be positive".into()));
        }
        Ok(())
    }

    /// Reads a JSON config file; unknown keys are rejected.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the canonical JSON form.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Content hash of the canonical serialization (first 16 hex chars of
    /// SHA-256). Any semantic change to the configuration changes the hash.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

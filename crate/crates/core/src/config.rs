//! JSON deployment configuration shared by the daemons and the client CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::client::ClientConfig;
use crate::epoch::EpochClock;
use crate::server::DEFAULT_H_KEEP;
use crate::wire::Tier;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("parsing {0}: {1}")]
    Parse(PathBuf, #[source] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierAddrs {
    pub registration: String,
    pub lookup: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    pub clock: EpochClock,
    pub n_fmax: usize,
    pub n_rev: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default = "default_h_keep")]
    pub h_keep: usize,
    pub long_term: TierAddrs,
    pub short_term: TierAddrs,
    /// Records a single connection may register before being refused.
    #[serde(default = "default_record_cap")]
    pub max_records_per_connection: usize,
    /// Lookup servers listed here corrupt their responses (testing only).
    #[serde(default)]
    pub faulty_lookup_servers: Vec<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_t() -> usize {
    1
}

fn default_h_keep() -> usize {
    DEFAULT_H_KEEP
}

fn default_record_cap() -> usize {
    16
}

impl DeploymentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let cfg: DeploymentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(path.to_path_buf(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.clock
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let n = self.long_term.lookup.len();
        if n == 0 || self.short_term.lookup.len() != n {
            return Err(ConfigError::Invalid(
                "both tiers need the same non-zero number of lookup servers".into(),
            ));
        }
        crate::pir::check_privacy_level(self.t, n)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.n_rev == 0 || self.n_fmax == 0 {
            return Err(ConfigError::Invalid(
                "n_rev and n_fmax must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_lookup(&self) -> usize {
        self.long_term.lookup.len()
    }

    pub fn tier(&self, tier: Tier) -> &TierAddrs {
        match tier {
            Tier::Long => &self.long_term,
            Tier::Short => &self.short_term,
        }
    }

    pub fn client_config(&self) -> ClientConfig {
        ClientConfig {
            n_fmax: self.n_fmax,
            n_rev: self.n_rev,
            t: self.t,
            n_lookup: self.n_lookup(),
            h_keep: self.h_keep,
            st_per_lt: self.clock.st_per_lt(),
        }
    }
}

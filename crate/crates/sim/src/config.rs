use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use mp3_core::client::ClientConfig;
use mp3_core::pir;
use mp3_core::records::ST_CT_LEN;
use mp3_core::server::DEFAULT_H_KEEP;

/// Short-term entry length: 32-byte id plus the stored ciphertext.
pub const DEFAULT_DP5_RECORD_LEN: usize = 32 + ST_CT_LEN;

#[derive(Debug, Error)]
pub enum SimConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// `revoker` drops `revoked` (or its first follower) in the record for
/// long-term epoch `lt_epoch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledRevocation {
    pub lt_epoch: u64,
    pub revoker: usize,
    #[serde(default)]
    pub revoked: Option<usize>,
}

/// `client` is offline during long-term epochs `from..=to` and catches up
/// when it returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Absence {
    pub client: usize,
    pub from: u64,
    pub to: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_clients: usize,
    pub n_fmax: usize,
    pub n_rev: usize,
    #[serde(default = "default_n_lookup")]
    pub n_lookup: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    /// Long-term epochs with databases; epoch 0 only bootstraps.
    pub lt_epochs: u64,
    pub st_epochs_per_lt: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_online")]
    pub online_probability: f64,
    /// Chance per long-term registration that each follower is revoked.
    #[serde(default)]
    pub revocation_rate: f64,
    /// Defaults to `n_fmax / 2`.
    #[serde(default)]
    pub friends_per_client: Option<usize>,
    /// Clients that run real lookups; the rest are metered. Defaults to all.
    #[serde(default)]
    pub probe_clients: Option<usize>,
    #[serde(default = "default_dp5_len")]
    pub dp5_record_len: usize,
    #[serde(default = "default_h_keep")]
    pub h_keep: usize,
    #[serde(default)]
    pub revocations: Vec<ScheduledRevocation>,
    #[serde(default)]
    pub absences: Vec<Absence>,
}

fn default_n_lookup() -> usize {
    3
}

fn default_t() -> usize {
    1
}

fn default_online() -> f64 {
    1.0
}

fn default_dp5_len() -> usize {
    DEFAULT_DP5_RECORD_LEN
}

fn default_h_keep() -> usize {
    DEFAULT_H_KEEP
}

impl SimConfig {
    pub fn new(
        n_clients: usize,
        n_fmax: usize,
        n_rev: usize,
        lt_epochs: u64,
        st_epochs_per_lt: u64,
        seed: u64,
    ) -> Self {
        SimConfig {
            n_clients,
            n_fmax,
            n_rev,
            n_lookup: default_n_lookup(),
            t: default_t(),
            lt_epochs,
            st_epochs_per_lt,
            seed,
            online_probability: 1.0,
            revocation_rate: 0.0,
            friends_per_client: None,
            probe_clients: None,
            dp5_record_len: DEFAULT_DP5_RECORD_LEN,
            h_keep: DEFAULT_H_KEEP,
            revocations: Vec::new(),
            absences: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, SimConfigError> {
        let cfg: SimConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn friends_per_client(&self) -> usize {
        self.friends_per_client.unwrap_or(self.n_fmax / 2)
    }

    pub fn probe_clients(&self) -> usize {
        self.probe_clients
            .unwrap_or(self.n_clients)
            .min(self.n_clients)
    }

    pub fn client_config(&self) -> ClientConfig {
        ClientConfig {
            n_fmax: self.n_fmax,
            n_rev: self.n_rev,
            t: self.t,
            n_lookup: self.n_lookup,
            h_keep: self.h_keep,
            st_per_lt: self.st_epochs_per_lt,
        }
    }

    pub fn validate(&self) -> Result<(), SimConfigError> {
        let bad = |m: String| Err(SimConfigError::Invalid(m));
        pir::check_privacy_level(self.t, self.n_lookup)
            .map_err(|e| SimConfigError::Invalid(e.to_string()))?;
        if self.n_rev == 0 {
            return bad("n_rev must be at least 1".into());
        }
        if self.n_fmax == 0 {
            return bad("n_fmax must be at least 1".into());
        }
        if self.friends_per_client() > self.n_fmax {
            return bad(format!(
                "friends_per_client {} exceeds n_fmax {}",
                self.friends_per_client(),
                self.n_fmax
            ));
        }
        if self.lt_epochs == 0 || self.st_epochs_per_lt == 0 {
            return bad("lt_epochs and st_epochs_per_lt must be positive".into());
        }
        if self.h_keep == 0 {
            return bad("h_keep must be positive".into());
        }
        if self.dp5_record_len == 0 {
            return bad("dp5_record_len must be positive".into());
        }
        for (name, p) in [
            ("online_probability", self.online_probability),
            ("revocation_rate", self.revocation_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        for r in &self.revocations {
            if r.revoker >= self.n_clients
                || r.revoked
                    .is_some_and(|c| c >= self.n_clients || c == r.revoker)
            {
                return bad(format!("revocation {r:?} names an unknown client"));
            }
            if r.lt_epoch == 0 || r.lt_epoch > self.lt_epochs {
                return bad(format!(
                    "revocation epoch {} outside 1..={}",
                    r.lt_epoch, self.lt_epochs
                ));
            }
        }
        for a in &self.absences {
            if a.client >= self.n_clients {
                return bad(format!("absence names unknown client {}", a.client));
            }
            if a.from == 0 || a.from > a.to {
                return bad(format!(
                    "absence {}..={} is empty or starts at 0",
                    a.from, a.to
                ));
            }
            if a.to + 1 - a.from >= self.h_keep as u64 {
                return bad(format!(
                    "absence {}..={} outlasts h_keep {}",
                    a.from, a.to, self.h_keep
                ));
            }
        }
        Ok(())
    }

    pub fn is_absent(&self, client: usize, lt: u64) -> bool {
        self.absences
            .iter()
            .any(|a| a.client == client && (a.from..=a.to).contains(&lt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let cfg: SimConfig = serde_json::from_str(
            r#"{"n_clients": 10, "n_fmax": 4, "n_rev": 1, "lt_epochs": 2, "st_epochs_per_lt": 3}"#,
        )
        .unwrap();
        assert_eq!(cfg.n_lookup, 3);
        assert_eq!(cfg.t, 1);
        assert_eq!(cfg.friends_per_client(), 2);
        assert_eq!(cfg.probe_clients(), 10);
        assert_eq!(cfg.dp5_record_len, 306);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_violations() {
        let base = SimConfig::new(10, 4, 1, 2, 2, 0);
        let mut c = base.clone();
        c.t = 2;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.n_rev = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.friends_per_client = Some(5);
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.absences.push(Absence {
            client: 1,
            from: 1,
            to: 40,
        });
        assert!(c.validate().is_err());
        let mut c = base;
        c.online_probability = 1.5;
        assert!(c.validate().is_err());
    }
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EpochError {
    #[error("time {now} is before genesis {genesis}")]
    BeforeGenesis { now: u64, genesis: u64 },
    #[error("long-term duration {lt}s is not a positive multiple of short-term duration {st}s")]
    BadDurations { lt: u64, st: u64 },
}

/// Maps wall-clock seconds to long-term (`j`) and short-term (`i`) indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochClock {
    pub genesis: u64,
    #[serde(default = "default_lt")]
    pub lt_duration: u64,
    #[serde(default = "default_st")]
    pub st_duration: u64,
}

fn default_lt() -> u64 {
    86_400
}

fn default_st() -> u64 {
    300
}

impl EpochClock {
    pub fn new(genesis: u64, lt_duration: u64, st_duration: u64) -> Result<Self, EpochError> {
        let clock = EpochClock {
            genesis,
            lt_duration,
            st_duration,
        };
        clock.validate()?;
        Ok(clock)
    }

    pub fn with_defaults(genesis: u64) -> Self {
        EpochClock {
            genesis,
            lt_duration: default_lt(),
            st_duration: default_st(),
        }
    }

    pub fn validate(&self) -> Result<(), EpochError> {
        if self.st_duration == 0
            || self.lt_duration == 0
            || !self.lt_duration.is_multiple_of(self.st_duration)
        {
            return Err(EpochError::BadDurations {
                lt: self.lt_duration,
                st: self.st_duration,
            });
        }
        Ok(())
    }

    pub fn st_per_lt(&self) -> u64 {
        self.lt_duration / self.st_duration
    }

    /// `(j, i)` for the instant `now`.
    pub fn epoch_at(&self, now: u64) -> Result<(u64, u64), EpochError> {
        let elapsed = now
            .checked_sub(self.genesis)
            .ok_or(EpochError::BeforeGenesis {
                now,
                genesis: self.genesis,
            })?;
        Ok((elapsed / self.lt_duration, elapsed / self.st_duration))
    }

    /// Long-term epoch containing short-term epoch `i`.
    pub fn lt_of_st(&self, i: u64) -> u64 {
        i / self.st_per_lt()
    }

    /// `[start, end)` of long-term epoch `j`.
    pub fn lt_bounds(&self, j: u64) -> (u64, u64) {
        let start = self.genesis + j * self.lt_duration;
        (start, start + self.lt_duration)
    }

    /// `[start, end)` of short-term epoch `i`.
    pub fn st_bounds(&self, i: u64) -> (u64, u64) {
        let start = self.genesis + i * self.st_duration;
        (start, start + self.st_duration)
    }
}

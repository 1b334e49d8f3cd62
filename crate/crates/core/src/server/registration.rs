use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::pir::{build_database, PirDatabase};
use crate::primitives::Identifier;
use crate::records::{LongTermRecord, RecordError, ShortTermRecord, ST_CT_LEN};
use crate::wire::{ErrorCode, Frame, MsgType, Tier};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegError {
    #[error("signature does not verify under the previous long-term key")]
    BadSignature,
    #[error("registration for epoch {got}, window is open for {open}")]
    WrongEpochWindow { got: u64, open: u64 },
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("message type not accepted by a {0:?}-term registration server")]
    WrongTier(Tier),
}

impl RegError {
    pub fn code(&self) -> ErrorCode {
        match self {
            RegError::BadSignature => ErrorCode::BadSignature,
            RegError::WrongEpochWindow { .. } => ErrorCode::WrongEpochWindow,
            RegError::MalformedRecord(_) => ErrorCode::MalformedRecord,
            RegError::WrongTier(_) => ErrorCode::BadFrame,
        }
    }
}

/// A closed epoch's database.
#[derive(Clone, Debug)]
pub struct PublishedDb {
    pub db: Arc<PirDatabase>,
    pub real_entries: usize,
}

/// One tier's registration service. Accepts records for exactly one target
/// epoch (the window) at a time.
#[derive(Debug)]
pub struct RegistrationServer {
    tier: Tier,
    n_rev: usize,
    keep: usize,
    window: u64,
    pending: BTreeMap<Identifier, Vec<u8>>,
    published: VecDeque<(u64, PublishedDb)>,
    rng: ChaCha20Rng,
}

impl RegistrationServer {
    /// `keep` is the number of published databases retained; `first_window`
    /// the epoch whose registrations are accepted first.
    pub fn new(tier: Tier, n_rev: usize, keep: usize, first_window: u64, seed: u64) -> Self {
        RegistrationServer {
            tier,
            n_rev,
            keep: keep.max(1),
            window: first_window,
            pending: BTreeMap::new(),
            published: VecDeque::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn tier(&self) -> Tier {
        self.tier
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Length of a stored value in this tier's database.
    pub fn value_len(&self) -> usize {
        match self.tier {
            Tier::Long => LongTermRecord::stored_len(self.n_rev),
            Tier::Short => ST_CT_LEN,
        }
    }

    fn check_window(&self, epoch: u64) -> Result<(), RegError> {
        if epoch != self.window {
            return Err(RegError::WrongEpochWindow {
                got: epoch,
                open: self.window,
            });
        }
        Ok(())
    }

    /// Verifies and stores a long-term record under `H2(prev_pk)`.
    pub fn accept_lt(&mut self, epoch: u64, bytes: &[u8]) -> Result<Identifier, RegError> {
        if self.tier != Tier::Long {
            return Err(RegError::WrongTier(self.tier));
        }
        self.check_window(epoch)?;
        let record = LongTermRecord::from_bytes(bytes, self.n_rev).map_err(|e| match e {
            RecordError::Malformed(m) => RegError::MalformedRecord(m),
            other => RegError::MalformedRecord(other.to_string()),
        })?;
        if !record.verify() {
            return Err(RegError::BadSignature);
        }
        let id = record.id();
        self.pending.insert(id, record.stored_value());
        Ok(id)
    }

    /// Stores a short-term record under `H3(e(g1, tag))`. Nothing about the
    /// record can be verified here.
    pub fn accept_st(&mut self, epoch: u64, bytes: &[u8]) -> Result<Identifier, RegError> {
        if self.tier != Tier::Short {
            return Err(RegError::WrongTier(self.tier));
        }
        self.check_window(epoch)?;
        let record = ShortTermRecord::from_bytes(bytes)
            .map_err(|e| RegError::MalformedRecord(e.to_string()))?;
        let id = record.id();
        self.pending.insert(id, record.ct);
        Ok(id)
    }

    pub fn handle_frame(&mut self, frame: &Frame) -> Frame {
        let result = match frame.msg_type {
            MsgType::RegisterLt => self.accept_lt(frame.epoch_id, &frame.payload),
            MsgType::RegisterSt => self.accept_st(frame.epoch_id, &frame.payload),
            other => {
                return Frame::error(
                    ErrorCode::BadFrame,
                    frame.epoch_id,
                    &format!("unexpected {other:?} at registration server"),
                )
            }
        };
        match result {
            Ok(_) => Frame::ack(frame.epoch_id),
            Err(e) => {
                log::debug!("{:?} registration rejected: {e}", self.tier);
                Frame::error(e.code(), frame.epoch_id, &e.to_string())
            }
        }
    }

    /// Builds the database for the current window, opens the next window and
    /// evicts databases beyond the retention limit.
    pub fn close_epoch(&mut self) -> PublishedDb {
        let epoch = self.window;
        let entries: Vec<(Identifier, Vec<u8>)> =
            std::mem::take(&mut self.pending).into_iter().collect();
        let db = build_database(&entries, self.value_len(), epoch, &mut self.rng)
            .expect("pending store has distinct ids and fixed-length values");
        let published = PublishedDb {
            db: Arc::new(db),
            real_entries: entries.len(),
        };
        log::info!(
            "{:?}-term epoch {epoch} closed: {} records, {} buckets",
            self.tier,
            published.real_entries,
            published.db.meta().num_buckets
        );
        self.published.push_back((epoch, published.clone()));
        while self.published.len() > self.keep {
            self.published.pop_front();
        }
        self.window += 1;
        published
    }

    pub fn published(&self, epoch: u64) -> Option<&PublishedDb> {
        self.published
            .iter()
            .find(|(e, _)| *e == epoch)
            .map(|(_, p)| p)
    }

    pub fn retained_epochs(&self) -> Vec<u64> {
        self.published.iter().map(|(e, _)| *e).collect()
    }
}

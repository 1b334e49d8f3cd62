use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::pir::{answer_query, PirDatabase, PirError, PirMeta, PirQuery, PirResponse};
use crate::wire::{ErrorCode, Frame, MsgType};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LookupError {
    #[error("epoch {0} not held by this server")]
    UnknownEpoch(u64),
    #[error("bad query: {0}")]
    BadQuery(String),
    #[error("pushed database does not match its digest")]
    DigestMismatch,
    #[error("malformed push: {0}")]
    Malformed(String),
}

impl LookupError {
    pub fn code(&self) -> ErrorCode {
        match self {
            LookupError::UnknownEpoch(_) => ErrorCode::UnknownEpoch,
            LookupError::BadQuery(_) => ErrorCode::BadQuery,
            LookupError::DigestMismatch => ErrorCode::DigestMismatch,
            LookupError::Malformed(_) => ErrorCode::BadFrame,
        }
    }
}

/// DB_PUSH frame: `sha256(db) | meta | buckets`.
pub fn push_frame(db: &PirDatabase) -> Frame {
    let body = db.to_bytes();
    let mut payload = Vec::with_capacity(32 + body.len());
    payload.extend_from_slice(&Sha256::digest(&body));
    payload.extend_from_slice(&body);
    Frame::new(MsgType::DbPush, db.meta().epoch_id, payload)
}

/// PIR lookup server for one tier. Databases are immutable once installed;
/// a push swaps in a new `Arc` under the write lock.
#[derive(Debug)]
pub struct LookupServer {
    index: usize,
    keep: usize,
    corrupt_responses: bool,
    dbs: RwLock<BTreeMap<u64, Arc<PirDatabase>>>,
}

impl LookupServer {
    pub fn new(index: usize, keep: usize) -> Self {
        LookupServer {
            index,
            keep: keep.max(1),
            corrupt_responses: false,
            dbs: RwLock::new(BTreeMap::new()),
        }
    }

    /// Test hook: every response gets one byte flipped, at a position that
    /// depends only on the epoch.
    pub fn with_fault_injection(mut self, on: bool) -> Self {
        self.corrupt_responses = on;
        self
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn install(&self, db: Arc<PirDatabase>) {
        let mut dbs = self.dbs.write().expect("lock poisoned");
        dbs.insert(db.meta().epoch_id, db);
        while dbs.len() > self.keep {
            let oldest = *dbs.keys().next().expect("non-empty");
            dbs.remove(&oldest);
        }
    }

    pub fn install_push(&self, epoch: u64, payload: &[u8]) -> Result<(), LookupError> {
        if payload.len() < 32 {
            return Err(LookupError::Malformed("missing digest".into()));
        }
        let (digest, body) = payload.split_at(32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(LookupError::DigestMismatch);
        }
        let db =
            PirDatabase::from_bytes(body).map_err(|e| LookupError::Malformed(e.to_string()))?;
        if db.meta().epoch_id != epoch {
            return Err(LookupError::Malformed(
                "frame epoch differs from meta epoch".into(),
            ));
        }
        self.install(Arc::new(db));
        Ok(())
    }

    pub fn database(&self, epoch: u64) -> Result<Arc<PirDatabase>, LookupError> {
        self.dbs
            .read()
            .expect("lock poisoned")
            .get(&epoch)
            .cloned()
            .ok_or(LookupError::UnknownEpoch(epoch))
    }

    pub fn get_meta(&self, epoch: u64) -> Result<PirMeta, LookupError> {
        Ok(*self.database(epoch)?.meta())
    }

    pub fn serve_query(&self, epoch: u64, q: &PirQuery) -> Result<PirResponse, LookupError> {
        let db = self.database(epoch)?;
        let mut resp = answer_query(&db, q).map_err(|e| match e {
            PirError::BadQuery { .. } => LookupError::BadQuery(e.to_string()),
            other => LookupError::BadQuery(other.to_string()),
        })?;
        if self.corrupt_responses && !resp.0.is_empty() {
            let pos = (epoch as usize) % resp.0.len();
            resp.0[pos] ^= 0x5a;
        }
        Ok(resp)
    }

    pub fn retained_epochs(&self) -> Vec<u64> {
        self.dbs
            .read()
            .expect("lock poisoned")
            .keys()
            .copied()
            .collect()
    }

    pub fn handle_frame(&self, frame: &Frame) -> Frame {
        let epoch = frame.epoch_id;
        let result = match frame.msg_type {
            MsgType::GetMeta => self
                .get_meta(epoch)
                .map(|m| Frame::new(MsgType::Meta, epoch, m.to_bytes().to_vec())),
            MsgType::PirQuery => self
                .serve_query(epoch, &PirQuery(frame.payload.clone()))
                .map(|r| Frame::new(MsgType::PirResponse, epoch, r.0)),
            MsgType::DbPush => self
                .install_push(epoch, &frame.payload)
                .map(|_| Frame::ack(epoch)),
            other => {
                return Frame::error(
                    ErrorCode::BadFrame,
                    epoch,
                    &format!("unexpected {other:?} at lookup server"),
                )
            }
        };
        result.unwrap_or_else(|e| {
            log::debug!("lookup server {} error: {e}", self.index);
            Frame::error(e.code(), epoch, &e.to_string())
        })
    }
}

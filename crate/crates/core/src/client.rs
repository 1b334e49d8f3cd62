//! Client state machine: own key chain and broadcast manager key, the friends
//! this client follows, and the register/lookup operations of both tiers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broadcast::{self, DecryptionKey, ManagerKey, DECRYPTION_KEY_LEN};
use crate::group::{G1Elem, Scalar, G1_LEN};
use crate::pir::{self, Consistency, PirError, PirMeta, PirQuery, PirResponse, META_LEN};
use crate::primitives::{Identifier, LT_PK_LEN};
use crate::records::{
    self, lt_record_id, open_lt_record, open_st_ct, st_record_id_from_pub, ClientEpochKeys,
    LongTermRecord, RecordError, ShortTermRecord,
};
use crate::transport::{Dest, Transport, TransportError};
use crate::wire::{ErrorCode, Frame, MsgType, Tier};

/// Registration attempts before giving up on an unreachable server.
const SEND_ATTEMPTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub n_fmax: usize,
    pub n_rev: usize,
    pub t: usize,
    pub n_lookup: usize,
    pub h_keep: usize,
    /// Short-term epochs per long-term epoch.
    pub st_per_lt: u64,
}

impl ClientConfig {
    pub fn lt_of_st(&self, i: u64) -> u64 {
        i / self.st_per_lt
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("friend limit of {limit} reached")]
    FriendLimitReached { limit: usize },
    #[error("no friend labelled {0:?}")]
    UnknownFriend(String),
    #[error("label {0:?} already in use")]
    DuplicateFriend(String),
    #[error("no own keys for an epoch before {epoch}")]
    NoKeys { epoch: u64 },
    #[error("long-term lookups are at epoch {expected}, asked for {got}")]
    NotCurrent { expected: u64, got: u64 },
    #[error("epochs {from}..={to} are no longer retained; friends must re-share keys out of band")]
    NeedRekey { from: u64, to: u64 },
    #[error("epoch {epoch} unknown to lookup servers")]
    UnknownEpoch { epoch: u64 },
    #[error("no strict majority among lookup server metadata for epoch {epoch}")]
    MetaDisagreement { epoch: u64 },
    #[error("lookup servers {servers:?} returned inconsistent responses for epoch {epoch}")]
    Inconsistent { epoch: u64, servers: Vec<usize> },
    #[error("server rejected request ({code:?}): {detail}")]
    Rejected { code: ErrorCode, detail: String },
    #[error("unexpected {0:?} reply")]
    UnexpectedReply(MsgType),
    #[error("malformed friend bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Pir(#[from] PirError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    SelfRevoked,
    AuthFailure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FriendStatus {
    Active,
    Terminated(TerminationReason),
}

/// What this client knows about one friend it follows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FriendState {
    pub dk: DecryptionKey,
    /// The friend's signing key for the last processed epoch; the next
    /// record is stored under `H2` of it and signed with it.
    pub known_lt_pk: [u8; LT_PK_LEN],
    pub known_presence_pub: Option<G1Elem>,
    pub last_processed_lt_epoch: u64,
    pub status: FriendStatus,
}

impl FriendState {
    pub fn is_active(&self) -> bool {
        self.status == FriendStatus::Active
    }
}

/// Out-of-band friend bundle: `dk | P | p | epoch`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FriendBundle {
    pub dk: DecryptionKey,
    pub lt_pk: [u8; LT_PK_LEN],
    pub presence_pub: G1Elem,
    pub epoch: u64,
}

impl FriendBundle {
    pub const LEN: usize = DECRYPTION_KEY_LEN + LT_PK_LEN + G1_LEN + 8;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::LEN);
        out.extend_from_slice(&self.dk.to_bytes());
        out.extend_from_slice(&self.lt_pk);
        out.extend_from_slice(&self.presence_pub.to_bytes());
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ClientError> {
        if bytes.len() != Self::LEN {
            return Err(ClientError::Bundle(format!(
                "{} bytes, expected {}",
                bytes.len(),
                Self::LEN
            )));
        }
        let (dk, rest) = bytes.split_at(DECRYPTION_KEY_LEN);
        let (pk, rest) = rest.split_at(LT_PK_LEN);
        let (p, epoch) = rest.split_at(G1_LEN);
        Ok(FriendBundle {
            dk: DecryptionKey::from_bytes(dk).map_err(|e| ClientError::Bundle(e.to_string()))?,
            lt_pk: pk.try_into().expect("split at LT_PK_LEN"),
            presence_pub: G1Elem::from_bytes(p).map_err(|e| ClientError::Bundle(e.to_string()))?,
            epoch: u64::from_be_bytes(epoch.try_into().expect("8 bytes")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LtOutcome {
    Updated,
    NotFound,
    /// A record was stored under the friend's id but its signature did not
    /// verify; it is treated like an absent record.
    Ignored,
    Terminated(TerminationReason),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Presence {
    Online(Vec<u8>),
    Offline,
    Unknown,
}

#[derive(Clone, Debug)]
pub struct Client {
    pub(crate) cfg: ClientConfig,
    pub(crate) mk: ManagerKey,
    pub(crate) keys_by_epoch: BTreeMap<u64, ClientEpochKeys>,
    pub(crate) pending_revocations: Vec<Scalar>,
    /// Friends this client publishes to, by label, with their `x`.
    pub(crate) followers: BTreeMap<String, Scalar>,
    /// Friends this client follows.
    pub(crate) following: BTreeMap<String, FriendState>,
    /// Last long-term epoch whose database was looked up.
    pub(crate) lt_checked_through: u64,
    pub(crate) rng: ChaCha20Rng,
}

impl Client {
    /// Fresh identity whose first keys belong to long-term epoch `epoch`.
    pub fn new(cfg: ClientConfig, epoch: u64, seed: [u8; 32]) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed);
        let mk = broadcast::setup(&mut rng);
        let mut keys_by_epoch = BTreeMap::new();
        keys_by_epoch.insert(epoch, ClientEpochKeys::generate(&mut rng));
        Client {
            cfg,
            mk,
            keys_by_epoch,
            pending_revocations: Vec::new(),
            followers: BTreeMap::new(),
            following: BTreeMap::new(),
            lt_checked_through: epoch,
            rng,
        }
    }

    pub fn from_os_rng(cfg: ClientConfig, epoch: u64) -> Self {
        let mut seed = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut seed);
        Self::new(cfg, epoch, seed)
    }

    pub fn config(&self) -> &ClientConfig {
        &self.cfg
    }

    pub fn manager_key(&self) -> &ManagerKey {
        &self.mk
    }

    pub fn following(&self) -> &BTreeMap<String, FriendState> {
        &self.following
    }

    pub fn followers(&self) -> &BTreeMap<String, Scalar> {
        &self.followers
    }

    pub fn pending_revocations(&self) -> &[Scalar] {
        &self.pending_revocations
    }

    pub fn lt_checked_through(&self) -> u64 {
        self.lt_checked_through
    }

    pub fn keys_by_epoch(&self) -> &BTreeMap<u64, ClientEpochKeys> {
        &self.keys_by_epoch
    }

    /// Latest committed keys and their epoch.
    pub fn current_keys(&self) -> (u64, &ClientEpochKeys) {
        let (j, k) = self
            .keys_by_epoch
            .iter()
            .next_back()
            .expect("keys exist from construction");
        (*j, k)
    }

    fn keys_before(&self, j: u64) -> Result<&ClientEpochKeys, ClientError> {
        self.keys_by_epoch
            .range(..j)
            .next_back()
            .map(|(_, k)| k)
            .ok_or(ClientError::NoKeys { epoch: j })
    }

    fn keys_at_or_before(&self, j: u64) -> Result<&ClientEpochKeys, ClientError> {
        self.keys_by_epoch
            .range(..=j)
            .next_back()
            .map(|(_, k)| k)
            .ok_or(ClientError::NoKeys { epoch: j + 1 })
    }

    /// Grants a new member key and packages it with the current public keys.
    pub fn befriend_out(&mut self, label: &str) -> Result<FriendBundle, ClientError> {
        if self.followers.contains_key(label) {
            return Err(ClientError::DuplicateFriend(label.to_string()));
        }
        if self.followers.len() >= self.cfg.n_fmax {
            return Err(ClientError::FriendLimitReached {
                limit: self.cfg.n_fmax,
            });
        }
        let dk = broadcast::grant(&mut self.mk, &mut self.rng);
        self.followers.insert(label.to_string(), dk.x);
        let (epoch, keys) = self.current_keys();
        Ok(FriendBundle {
            dk,
            lt_pk: keys.lt_public(),
            presence_pub: keys.presence_pub,
            epoch,
        })
    }

    /// Starts following a friend from their bundle. The friend's next record
    /// is expected in epoch `bundle.epoch + 1`, so the bundle should be
    /// imported before that epoch is looked up.
    pub fn import_friend(&mut self, label: &str, bundle: &FriendBundle) -> Result<(), ClientError> {
        if self
            .following
            .get(label)
            .is_some_and(FriendState::is_active)
        {
            return Err(ClientError::DuplicateFriend(label.to_string()));
        }
        let active = self.following.values().filter(|f| f.is_active()).count();
        if active >= self.cfg.n_fmax {
            return Err(ClientError::FriendLimitReached {
                limit: self.cfg.n_fmax,
            });
        }
        self.following.insert(
            label.to_string(),
            FriendState {
                dk: bundle.dk,
                known_lt_pk: bundle.lt_pk,
                known_presence_pub: Some(bundle.presence_pub),
                last_processed_lt_epoch: bundle.epoch,
                status: FriendStatus::Active,
            },
        );
        Ok(())
    }

    /// Queues a follower for revocation in the next long-term registration.
    pub fn revoke_friend(&mut self, label: &str) -> Result<(), ClientError> {
        let x = self
            .followers
            .remove(label)
            .ok_or_else(|| ClientError::UnknownFriend(label.to_string()))?;
        self.pending_revocations.push(x);
        Ok(())
    }

    /// Stops following a friend locally.
    pub fn unfollow(&mut self, label: &str) -> Result<(), ClientError> {
        self.following
            .remove(label)
            .map(|_| ())
            .ok_or_else(|| ClientError::UnknownFriend(label.to_string()))
    }

    fn send_registration<T: Transport + ?Sized>(
        &self,
        net: &mut T,
        dest: Dest,
        frame: &Frame,
    ) -> Result<(), ClientError> {
        let mut last = None;
        for attempt in 0..SEND_ATTEMPTS {
            match net.request(dest, frame) {
                Ok(reply) => return expect_ack(&reply),
                Err(e) => {
                    log::warn!(
                        "registration attempt {} to {dest:?} failed: {e}",
                        attempt + 1
                    );
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt").into())
    }

    /// Builds and sends the record for long-term epoch `j` (to be called
    /// during `j - 1`). State changes only once the server acknowledges.
    pub fn register_long_term<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        j: u64,
    ) -> Result<LongTermRecord, ClientError> {
        let prev = self.keys_before(j)?.clone();
        let next = ClientEpochKeys::generate(&mut self.rng);
        let consumed = self.pending_revocations.len().min(self.cfg.n_rev);
        let mut mk = self.mk.clone();
        let record = records::make_lt_record(
            &prev,
            &next,
            &mut mk,
            &self.pending_revocations[..consumed],
            self.cfg.n_rev,
            j,
            &mut self.rng,
        )?;
        let frame = Frame::new(MsgType::RegisterLt, j, record.to_bytes());
        self.send_registration(net, Dest::Registration(Tier::Long), &frame)?;
        self.mk = mk;
        self.keys_by_epoch.insert(j, next);
        self.pending_revocations.drain(..consumed);
        Ok(record)
    }

    /// Registers presence for short-term epoch `i` (to be called during
    /// `i - 1`) under the keys of the containing long-term epoch.
    pub fn register_short_term<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        i: u64,
        message: &[u8],
    ) -> Result<ShortTermRecord, ClientError> {
        let keys = self.keys_at_or_before(self.cfg.lt_of_st(i))?;
        let record = records::make_st_record(keys, i, message)?;
        let frame = Frame::new(MsgType::RegisterSt, i, record.to_bytes());
        self.send_registration(net, Dest::Registration(Tier::Short), &frame)?;
        Ok(record)
    }

    /// Strict majority over byte-identical metadata from all lookup servers.
    fn fetch_meta<T: Transport + ?Sized>(
        &self,
        net: &mut T,
        tier: Tier,
        epoch: u64,
    ) -> Result<PirMeta, ClientError> {
        let n = self.cfg.n_lookup;
        let mut votes: BTreeMap<[u8; META_LEN], usize> = BTreeMap::new();
        let mut unknown = 0;
        for k in 0..n {
            let reply = match net.request(
                Dest::Lookup(tier, k),
                &Frame::new(MsgType::GetMeta, epoch, Vec::new()),
            ) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("meta from lookup server {k} failed: {e}");
                    continue;
                }
            };
            match reply.msg_type {
                MsgType::Meta => {
                    if let Ok(m) = PirMeta::from_bytes(&reply.payload) {
                        if m.epoch_id == epoch {
                            *votes.entry(m.to_bytes()).or_default() += 1;
                        }
                    }
                }
                MsgType::Error => {
                    if matches!(reply.error_parts(), Ok((ErrorCode::UnknownEpoch, _))) {
                        unknown += 1;
                    }
                }
                _ => {}
            }
        }
        if unknown * 2 > n {
            return Err(ClientError::UnknownEpoch { epoch });
        }
        votes
            .into_iter()
            .find(|(_, count)| count * 2 > n)
            .map(|(bytes, _)| PirMeta::from_bytes(&bytes).expect("re-parsing own encoding"))
            .ok_or(ClientError::MetaDisagreement { epoch })
    }

    /// Retrieves the values stored under `ids` from the tier's epoch
    /// database, always issuing exactly `n_fmax` queries per lookup server.
    fn private_lookup<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        tier: Tier,
        epoch: u64,
        ids: &[Identifier],
    ) -> Result<Vec<Option<Vec<u8>>>, ClientError> {
        let n_fmax = self.cfg.n_fmax;
        if ids.len() > n_fmax {
            return Err(ClientError::FriendLimitReached { limit: n_fmax });
        }
        let meta = self.fetch_meta(net, tier, epoch)?;

        // Slot s holds real id `order[s]` or padding.
        let mut slots: Vec<(Identifier, Option<usize>)> = ids
            .iter()
            .enumerate()
            .map(|(k, id)| (*id, Some(k)))
            .collect();
        while slots.len() < n_fmax {
            slots.push((Identifier::random(&mut self.rng), None));
        }
        slots.shuffle(&mut self.rng);

        let mut results = vec![None; ids.len()];
        for (id, target) in slots {
            let bucket_index = pir::bucket_of(&meta, &id);
            let queries = pir::make_query(
                &meta,
                bucket_index,
                self.cfg.t,
                self.cfg.n_lookup,
                &mut self.rng,
            )?;
            let mut responses: Vec<(usize, PirResponse)> = Vec::with_capacity(queries.len());
            for (k, PirQuery(share)) in queries.into_iter().enumerate() {
                match net.request(
                    Dest::Lookup(tier, k),
                    &Frame::new(MsgType::PirQuery, epoch, share),
                ) {
                    Ok(reply) if reply.msg_type == MsgType::PirResponse => {
                        responses.push((k, PirResponse(reply.payload)));
                    }
                    Ok(reply) => log::warn!("lookup server {k} answered {:?}", reply.msg_type),
                    Err(e) => log::warn!("query to lookup server {k} failed: {e}"),
                }
            }
            let (bucket, consistency) = match pir::reconstruct(&responses, self.cfg.t) {
                Ok(r) => r,
                Err(PirError::BadResponse(_)) => {
                    return Err(ClientError::Inconsistent {
                        epoch,
                        servers: responses.iter().map(|(k, _)| *k).collect(),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            if let Consistency::Inconsistent { servers } = consistency {
                return Err(ClientError::Inconsistent { epoch, servers });
            }
            if let Some(k) = target {
                if bucket.len() != meta.bucket_bytes as usize {
                    return Err(ClientError::Inconsistent {
                        epoch,
                        servers: Vec::new(),
                    });
                }
                results[k] = match pir::scan_bucket(&bucket, &id, meta.entry_len as usize) {
                    Ok(v) => Some(v.to_vec()),
                    Err(PirError::NotFound) => None,
                    Err(e) => return Err(e.into()),
                };
            }
        }
        Ok(results)
    }

    /// Looks up every active friend's record in long-term database `j` and
    /// advances their state. Nothing changes if the lookup itself fails.
    pub fn lookup_long_term<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        j: u64,
    ) -> Result<BTreeMap<String, LtOutcome>, ClientError> {
        if j != self.lt_checked_through + 1 {
            return Err(ClientError::NotCurrent {
                expected: self.lt_checked_through + 1,
                got: j,
            });
        }
        let labels: Vec<String> = self
            .following
            .iter()
            .filter(|(_, f)| f.is_active() && f.last_processed_lt_epoch < j)
            .map(|(l, _)| l.clone())
            .collect();
        let ids: Vec<Identifier> = labels
            .iter()
            .map(|l| lt_record_id(&self.following[l].known_lt_pk))
            .collect();
        let values = self.private_lookup(net, Tier::Long, j, &ids)?;

        let n_rev = self.cfg.n_rev;
        let mut report = BTreeMap::new();
        for (label, value) in labels.into_iter().zip(values) {
            let friend = self
                .following
                .get_mut(&label)
                .expect("label taken from map");
            let outcome = match value {
                None => LtOutcome::NotFound,
                Some(v) => match LongTermRecord::from_stored(&friend.known_lt_pk, &v, n_rev) {
                    Err(_) => LtOutcome::Ignored,
                    Ok(rec) => match open_lt_record(&rec, &friend.dk, j) {
                        Ok(opened) => {
                            friend.dk = opened.updated_key;
                            friend.known_lt_pk = opened.lt_pk;
                            friend.known_presence_pub = Some(opened.presence_pub);
                            friend.last_processed_lt_epoch = j;
                            LtOutcome::Updated
                        }
                        Err(RecordError::BadSignature) => LtOutcome::Ignored,
                        Err(RecordError::SelfRevoked) => {
                            terminate(friend, TerminationReason::SelfRevoked)
                        }
                        Err(_) => terminate(friend, TerminationReason::AuthFailure),
                    },
                },
            };
            report.insert(label, outcome);
        }
        self.lt_checked_through = j;
        Ok(report)
    }

    /// Replays every long-term database after the last checked one up to
    /// `to`, one full lookup per epoch.
    pub fn catch_up<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        to: u64,
    ) -> Result<Vec<BTreeMap<String, LtOutcome>>, ClientError> {
        let from = self.lt_checked_through + 1;
        if to < from {
            return Ok(Vec::new());
        }
        if to - self.lt_checked_through > self.cfg.h_keep as u64 {
            return Err(ClientError::NeedRekey { from, to });
        }
        let mut reports = Vec::new();
        for j in from..=to {
            match self.lookup_long_term(net, j) {
                Ok(r) => reports.push(r),
                Err(ClientError::UnknownEpoch { .. }) => {
                    return Err(ClientError::NeedRekey { from: j, to })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(reports)
    }

    /// Gives up on unretained epochs: lookups resume after `j`. Friends whose
    /// chains broke need fresh bundles.
    pub fn skip_to(&mut self, j: u64) {
        self.lt_checked_through = self.lt_checked_through.max(j);
    }

    /// Presence of every followed friend in short-term epoch `i`.
    pub fn lookup_short_term<T: Transport + ?Sized>(
        &mut self,
        net: &mut T,
        i: u64,
    ) -> Result<BTreeMap<String, Presence>, ClientError> {
        let known: Vec<(String, G1Elem)> = self
            .following
            .iter()
            .filter(|(_, f)| f.is_active())
            .filter_map(|(l, f)| f.known_presence_pub.map(|p| (l.clone(), p)))
            .collect();
        let ids: Vec<Identifier> = known
            .iter()
            .map(|(_, p)| st_record_id_from_pub(p, i))
            .collect();
        let values = self.private_lookup(net, Tier::Short, i, &ids)?;

        let mut report: BTreeMap<String, Presence> = self
            .following
            .keys()
            .map(|l| (l.clone(), Presence::Unknown))
            .collect();
        for ((label, p), value) in known.into_iter().zip(values) {
            let presence = match value {
                Some(ct) => match open_st_ct(&p, i, &ct) {
                    Ok(msg) => Presence::Online(msg),
                    Err(_) => Presence::Offline,
                },
                None => Presence::Offline,
            };
            report.insert(label, presence);
        }
        Ok(report)
    }
}

fn terminate(friend: &mut FriendState, reason: TerminationReason) -> LtOutcome {
    friend.status = FriendStatus::Terminated(reason);
    friend.known_presence_pub = None;
    LtOutcome::Terminated(reason)
}

fn expect_ack(reply: &Frame) -> Result<(), ClientError> {
    match reply.msg_type {
        MsgType::Ack => Ok(()),
        MsgType::Error => {
            let (code, detail) = reply
                .error_parts()
                .map_err(|_| ClientError::UnexpectedReply(MsgType::Error))?;
            Err(ClientError::Rejected { code, detail })
        }
        other => Err(ClientError::UnexpectedReply(other)),
    }
}

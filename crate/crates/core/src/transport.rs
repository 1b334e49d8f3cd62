//! Request/response transport between clients and servers, plus the
//! in-process network used by tests and the simulator.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::server::{push_frame, LookupServer, PublishedDb, RegistrationServer, SHORT_TERM_KEEP};
use crate::wire::{Frame, MsgType, Tier, WireError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dest {
    Registration(Tier),
    Lookup(Tier, usize),
}

impl Dest {
    pub fn tier(&self) -> Tier {
        match self {
            Dest::Registration(t) | Dest::Lookup(t, _) => *t,
        }
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{0:?} unreachable")]
    Unreachable(Dest),
    #[error("i/o error talking to {dest:?}: {detail}")]
    Io { dest: Dest, detail: String },
    #[error(transparent)]
    Wire(#[from] WireError),
}

pub trait Transport {
    fn request(&mut self, dest: Dest, frame: &Frame) -> Result<Frame, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn request(&mut self, dest: Dest, frame: &Frame) -> Result<Frame, TransportError> {
        (**self).request(dest, frame)
    }
}

/// Byte counters for one `(destination, frame epoch)` pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Traffic {
    /// Bytes of request frames received by the server.
    pub to_server: u64,
    /// Bytes of response frames sent by the server.
    pub from_server: u64,
    pub requests: u64,
    pub pir_queries: u64,
}

impl Traffic {
    fn add(&mut self, to_server: u64, from_server: u64, requests: u64, pir_queries: u64) {
        self.to_server += to_server;
        self.from_server += from_server;
        self.requests += requests;
        self.pir_queries += pir_queries;
    }
}

/// All servers of a deployment in one process. Frames still go through
/// their byte encoding so that counters are exact wire lengths.
#[derive(Debug)]
pub struct InProcessNetwork {
    registration: BTreeMap<Tier, RegistrationServer>,
    lookup: BTreeMap<Tier, Vec<LookupServer>>,
    traffic: BTreeMap<(Dest, u64), Traffic>,
    push_traffic: BTreeMap<(Tier, u64), u64>,
    down: BTreeSet<Dest>,
    accounting: bool,
}

impl InProcessNetwork {
    /// Registration windows open for long-term epoch `first_lt` and
    /// short-term epoch `first_st`.
    pub fn new(
        n_rev: usize,
        n_lookup: usize,
        h_keep: usize,
        first_lt: u64,
        first_st: u64,
        seed: u64,
    ) -> Self {
        let mut registration = BTreeMap::new();
        registration.insert(
            Tier::Long,
            RegistrationServer::new(Tier::Long, n_rev, h_keep, first_lt, seed),
        );
        registration.insert(
            Tier::Short,
            RegistrationServer::new(Tier::Short, n_rev, SHORT_TERM_KEEP, first_st, seed ^ 0x5354),
        );
        let mut lookup = BTreeMap::new();
        lookup.insert(
            Tier::Long,
            (0..n_lookup)
                .map(|k| LookupServer::new(k, h_keep))
                .collect(),
        );
        lookup.insert(
            Tier::Short,
            (0..n_lookup)
                .map(|k| LookupServer::new(k, SHORT_TERM_KEEP))
                .collect(),
        );
        InProcessNetwork {
            registration,
            lookup,
            traffic: BTreeMap::new(),
            push_traffic: BTreeMap::new(),
            down: BTreeSet::new(),
            accounting: true,
        }
    }

    pub fn registration(&self, tier: Tier) -> &RegistrationServer {
        &self.registration[&tier]
    }

    pub fn registration_mut(&mut self, tier: Tier) -> &mut RegistrationServer {
        self.registration
            .get_mut(&tier)
            .expect("both tiers present")
    }

    pub fn lookup(&self, tier: Tier) -> &[LookupServer] {
        &self.lookup[&tier]
    }

    /// Replaces lookup server `k` of `tier`, e.g. with a faulty one.
    pub fn replace_lookup(&mut self, tier: Tier, k: usize, server: LookupServer) {
        self.lookup.get_mut(&tier).expect("both tiers present")[k] = server;
    }

    pub fn set_down(&mut self, dest: Dest, down: bool) {
        if down {
            self.down.insert(dest);
        } else {
            self.down.remove(&dest);
        }
    }

    /// Closes the tier's registration window and pushes the database to
    /// every lookup server of that tier.
    pub fn close_and_push(&mut self, tier: Tier) -> PublishedDb {
        let published = self.registration_mut(tier).close_epoch();
        let frame = push_frame(&published.db);
        let wire = frame.to_bytes();
        for server in &self.lookup[&tier] {
            let received = Frame::from_bytes(&wire).expect("own encoding");
            let reply = server.handle_frame(&received);
            assert_eq!(reply.msg_type, MsgType::Ack, "in-process push must succeed");
            *self.push_traffic.entry((tier, frame.epoch_id)).or_default() += wire.len() as u64;
        }
        published
    }

    /// While off, requests are served but not counted.
    pub fn set_accounting(&mut self, on: bool) {
        self.accounting = on;
    }

    /// Adds traffic that was not actually exchanged but whose exact size is
    /// known (metered simulation mode).
    pub fn account(
        &mut self,
        dest: Dest,
        epoch: u64,
        to_server: u64,
        from_server: u64,
        requests: u64,
        pir_queries: u64,
    ) {
        self.traffic.entry((dest, epoch)).or_default().add(
            to_server,
            from_server,
            requests,
            pir_queries,
        );
    }

    pub fn traffic(&self, dest: Dest, epoch: u64) -> Traffic {
        self.traffic
            .get(&(dest, epoch))
            .copied()
            .unwrap_or_default()
    }

    /// Sum over all destinations of `tier` matching `pred`, for frames
    /// tagged with `epoch`.
    pub fn traffic_where(&self, tier: Tier, epoch: u64, pred: impl Fn(&Dest) -> bool) -> Traffic {
        let mut total = Traffic::default();
        for ((d, e), t) in &self.traffic {
            if *e == epoch && d.tier() == tier && pred(d) {
                total.add(t.to_server, t.from_server, t.requests, t.pir_queries);
            }
        }
        total
    }

    pub fn push_bytes(&self, tier: Tier, epoch: u64) -> u64 {
        self.push_traffic.get(&(tier, epoch)).copied().unwrap_or(0)
    }
}

impl Transport for InProcessNetwork {
    fn request(&mut self, dest: Dest, frame: &Frame) -> Result<Frame, TransportError> {
        if self.down.contains(&dest) {
            return Err(TransportError::Unreachable(dest));
        }
        let wire = frame.to_bytes();
        let received = Frame::from_bytes(&wire)?;
        let reply = match dest {
            Dest::Registration(tier) => self.registration_mut(tier).handle_frame(&received),
            Dest::Lookup(tier, k) => self
                .lookup
                .get(&tier)
                .and_then(|v| v.get(k))
                .ok_or(TransportError::Unreachable(dest))?
                .handle_frame(&received),
        };
        let reply_wire = reply.to_bytes();
        let queries = u64::from(received.msg_type == MsgType::PirQuery);
        if !self.accounting {
            return Ok(Frame::from_bytes(&reply_wire)?);
        }
        self.account(
            dest,
            received.epoch_id,
            wire.len() as u64,
            reply_wire.len() as u64,
            1,
            queries,
        );
        Ok(Frame::from_bytes(&reply_wire)?)
    }
}

/// Per-client byte counters keyed by `(tier, frame epoch)`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub by_epoch: BTreeMap<(Tier, u64), (u64, u64)>,
}

impl LinkCounters {
    pub fn add(&mut self, tier: Tier, epoch: u64, sent: u64, received: u64) {
        let e = self.by_epoch.entry((tier, epoch)).or_default();
        e.0 += sent;
        e.1 += received;
    }

    /// `(sent, received)` for frames of `tier` tagged `epoch`.
    pub fn get(&self, tier: Tier, epoch: u64) -> (u64, u64) {
        self.by_epoch.get(&(tier, epoch)).copied().unwrap_or((0, 0))
    }
}

/// Wraps a transport and records what one client sends and receives.
pub struct CountingLink<'a, T: Transport + ?Sized> {
    inner: &'a mut T,
    counters: &'a mut LinkCounters,
}

impl<'a, T: Transport + ?Sized> CountingLink<'a, T> {
    pub fn new(inner: &'a mut T, counters: &'a mut LinkCounters) -> Self {
        CountingLink { inner, counters }
    }
}

impl<T: Transport + ?Sized> Transport for CountingLink<'_, T> {
    fn request(&mut self, dest: Dest, frame: &Frame) -> Result<Frame, TransportError> {
        let reply = self.inner.request(dest, frame)?;
        self.counters.add(
            dest.tier(),
            frame.epoch_id,
            frame.encoded_len() as u64,
            reply.encoded_len() as u64,
        );
        Ok(reply)
    }
}

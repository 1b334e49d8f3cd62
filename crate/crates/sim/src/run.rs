//! Event loop over epochs. Long-term epoch 0 only bootstraps: clients
//! register for long-term epoch 1 and the first short-term epoch of it.
//! Then for every long-term epoch `e`:
//!
//! 1. long-term lookups for `e` (returning clients catch up),
//! 2. long-term registrations for `e + 1`,
//! 3. per short-term epoch `i`: lookups for `i`, registrations for `i + 1`,
//!    publication of `i + 1`,
//! 4. publication of long-term `e + 1`.
//!
//! Probe clients run every lookup for real and are checked against ground
//! truth. The remaining clients register for real but their lookups are
//! metered: traffic is added from exact frame sizes without doing the PIR.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use mp3_core::broadcast::DecryptionKey;
use mp3_core::client::{
    Client, ClientConfig, ClientError, FriendState, LtOutcome, Presence, TerminationReason,
};
use mp3_core::group::G1Elem;
use mp3_core::pir::{PirMeta, META_LEN};
use mp3_core::records::{self, LongTermRecord};
use mp3_core::transport::{CountingLink, Dest, InProcessNetwork, LinkCounters};
use mp3_core::wire::{Tier, FRAME_HEADER_LEN};

use crate::baseline::dp5_baseline;
use crate::config::{SimConfig, SimConfigError};
use crate::metrics::MetricsRow;

const MAX_NOTES: usize = 20;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] SimConfigError),
    #[error("client {client} in epoch {epoch}: {source}")]
    Client {
        client: usize,
        epoch: u64,
        #[source]
        source: ClientError,
    },
}

/// Results of the ground-truth comparisons made during a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Checks {
    pub presence_reports: u64,
    pub presence_mismatches: u64,
    pub lt_reports: u64,
    pub lt_mismatches: u64,
    pub revocations_applied: u64,
    /// Attempts by revoked probe clients to open later records of the
    /// friend that revoked them, and how many succeeded.
    pub revoked_attempts: u64,
    pub revoked_decryptions: u64,
    pub catch_ups: u64,
    pub catch_up_mismatches: u64,
    pub conservation_violations: u64,
    pub notes: Vec<String>,
}

impl Checks {
    pub fn all_ok(&self) -> bool {
        self.presence_mismatches == 0
            && self.lt_mismatches == 0
            && self.revoked_decryptions == 0
            && self.catch_up_mismatches == 0
            && self.conservation_violations == 0
    }

    fn note(&mut self, msg: String) {
        if self.notes.len() < MAX_NOTES {
            self.notes.push(msg);
        }
    }
}

#[derive(Debug)]
pub struct SimOutcome {
    pub rows: Vec<MetricsRow>,
    pub checks: Checks,
    /// Final client states, indexed like the config.
    pub clients: Vec<Client>,
}

pub fn label(c: usize) -> String {
    format!("c{c}")
}

fn presence_message(c: usize, i: u64) -> Vec<u8> {
    format!("c{c}@{i}").into_bytes()
}

/// Bytes a client exchanges with one lookup server for a full lookup:
/// `(sent, received)`.
pub fn lookup_frame_bytes(meta: &PirMeta, n_fmax: usize) -> (u64, u64) {
    let h = FRAME_HEADER_LEN as u64;
    let q = n_fmax as u64;
    let sent = h + q * (h + u64::from(meta.num_buckets));
    let received = h + META_LEN as u64 + q * (h + u64::from(meta.bucket_bytes));
    (sent, received)
}

/// What a revoked follower still holds about the friend that revoked it.
struct RevokedView {
    follower: usize,
    publisher: usize,
    from_lt: u64,
    dk: DecryptionKey,
    presence_pub: G1Elem,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    ccfg: ClientConfig,
    rng: ChaCha20Rng,
    net: InProcessNetwork,
    clients: Vec<Client>,
    links: Vec<LinkCounters>,
    probes: usize,
    /// `followers[a]`: clients currently allowed to follow `a`.
    followers: Vec<BTreeSet<usize>>,
    /// `following[f]`: every client `f` ever followed.
    following: Vec<BTreeSet<usize>>,
    /// `(follower, publisher)` → long-term epoch whose record revoked it.
    revoked_at: BTreeMap<(usize, usize), u64>,
    pending: Vec<VecDeque<usize>>,
    lt_registered: BTreeSet<(usize, u64)>,
    st_online: BTreeMap<(usize, u64), Vec<u8>>,
    revoked_views: Vec<RevokedView>,
    twins: BTreeMap<usize, Client>,
    published: BTreeMap<(Tier, u64), (u64, u64)>,
    checks: Checks,
}

pub fn run_sim(cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg);
    sim.build_graph()?;
    sim.run()?;
    let rows = sim.rows();
    Ok(SimOutcome {
        rows,
        checks: sim.checks,
        clients: sim.clients,
    })
}

/// Runs `cfg` once per client count, concatenating the rows.
pub fn sweep(cfg: &SimConfig, sizes: &[usize]) -> Result<Vec<MetricsRow>, SimError> {
    let mut rows = Vec::new();
    for &n in sizes {
        let c = SimConfig {
            n_clients: n,
            ..cfg.clone()
        };
        log::info!("sweep: N = {n}");
        rows.extend(run_sim(&c)?.rows);
    }
    Ok(rows)
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let ccfg = cfg.client_config();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let s = cfg.st_epochs_per_lt;
        let net = InProcessNetwork::new(cfg.n_rev, cfg.n_lookup, cfg.h_keep, 1, s, rng.next_u64());
        let clients = (0..cfg.n_clients)
            .map(|_| {
                let mut seed = [0u8; 32];
                rng.fill_bytes(&mut seed);
                Client::new(ccfg, 0, seed)
            })
            .collect();
        let n = cfg.n_clients;
        Sim {
            cfg,
            ccfg,
            rng,
            net,
            clients,
            links: vec![LinkCounters::default(); n],
            probes: cfg.probe_clients(),
            followers: vec![BTreeSet::new(); n],
            following: vec![BTreeSet::new(); n],
            revoked_at: BTreeMap::new(),
            pending: vec![VecDeque::new(); n],
            lt_registered: BTreeSet::new(),
            st_online: BTreeMap::new(),
            revoked_views: Vec::new(),
            twins: BTreeMap::new(),
            published: BTreeMap::new(),
            checks: Checks::default(),
        }
    }

    fn client_err(client: usize, epoch: u64) -> impl FnOnce(ClientError) -> SimError {
        move |source| SimError::Client {
            client,
            epoch,
            source,
        }
    }

    /// Random mutual friendships, each client capped at `friends_per_client`.
    fn build_graph(&mut self) -> Result<(), SimError> {
        let n = self.cfg.n_clients;
        let k = self.cfg.friends_per_client();
        let mut degree = vec![0usize; n];
        let mut edges = Vec::new();
        for a in 0..n {
            if degree[a] >= k {
                continue;
            }
            let mut candidates: Vec<usize> = (a + 1..n)
                .filter(|&b| degree[b] < k && !self.followers[a].contains(&b))
                .collect();
            candidates.shuffle(&mut self.rng);
            for b in candidates.into_iter().take(k - degree[a]) {
                degree[a] += 1;
                degree[b] += 1;
                self.followers[a].insert(b);
                self.followers[b].insert(a);
                edges.push((a, b));
            }
        }
        for (a, b) in edges {
            for (publisher, follower) in [(a, b), (b, a)] {
                let bundle = self.clients[publisher]
                    .befriend_out(&label(follower))
                    .map_err(Self::client_err(publisher, 0))?;
                self.clients[follower]
                    .import_friend(&label(publisher), &bundle)
                    .map_err(Self::client_err(follower, 0))?;
                self.following[follower].insert(publisher);
            }
        }
        Ok(())
    }

    fn present(&self, c: usize, lt: u64) -> bool {
        !self.cfg.is_absent(c, lt)
    }

    fn run(&mut self) -> Result<(), SimError> {
        let s = self.cfg.st_epochs_per_lt;
        let last = self.cfg.lt_epochs;
        let st_end = (last + 1) * s;

        self.lt_registrations(1)?;
        self.st_registrations(s, 0)?;
        self.publish(Tier::Short);
        self.publish(Tier::Long);

        for e in 1..=last {
            self.lt_lookups(e)?;
            self.revoked_lt_oracle(e);
            if e < last {
                self.lt_registrations(e + 1)?;
            }
            for i in e * s..(e + 1) * s {
                self.st_lookups(i, e)?;
                self.revoked_st_oracle(i);
                if i + 1 < st_end {
                    self.st_registrations(i + 1, e)?;
                    self.publish(Tier::Short);
                }
            }
            if e < last {
                self.publish(Tier::Long);
            }
        }
        Ok(())
    }

    fn publish(&mut self, tier: Tier) {
        let p = self.net.close_and_push(tier);
        let db = &p.db;
        let bytes = (META_LEN + db.data_len()) as u64;
        self.published
            .insert((tier, db.meta().epoch_id), (bytes, p.real_entries as u64));
    }

    /// Registrations for long-term epoch `j`, sent during `j - 1`.
    fn lt_registrations(&mut self, j: u64) -> Result<(), SimError> {
        for c in 0..self.cfg.n_clients {
            self.queue_revocations(c, j)?;
            if !self.present(c, j - 1) {
                continue;
            }
            let mut link = CountingLink::new(&mut self.net, &mut self.links[c]);
            self.clients[c]
                .register_long_term(&mut link, j)
                .map_err(Self::client_err(c, j - 1))?;
            self.lt_registered.insert((c, j));
            for _ in 0..self.cfg.n_rev {
                let Some(f) = self.pending[c].pop_front() else {
                    break;
                };
                self.revoked_at.insert((f, c), j);
                self.checks.revocations_applied += 1;
            }
        }
        Ok(())
    }

    fn queue_revocations(&mut self, c: usize, j: u64) -> Result<(), SimError> {
        let mut victims = Vec::new();
        for r in self
            .cfg
            .revocations
            .iter()
            .filter(|r| r.revoker == c && r.lt_epoch == j)
        {
            let victim = match r.revoked {
                Some(v) => v,
                None => match self.followers[c].iter().next() {
                    Some(&v) => v,
                    None => continue,
                },
            };
            if self.followers[c].contains(&victim) && !victims.contains(&victim) {
                victims.push(victim);
            }
        }
        if self.cfg.revocation_rate > 0.0 {
            for &f in &self.followers[c] {
                if self.rng.gen_bool(self.cfg.revocation_rate) && !victims.contains(&f) {
                    victims.push(f);
                }
            }
        }
        for v in victims {
            self.clients[c]
                .revoke_friend(&label(v))
                .map_err(Self::client_err(c, j - 1))?;
            self.followers[c].remove(&v);
            self.pending[c].push_back(v);
        }
        Ok(())
    }

    /// Registrations for short-term epoch `i`, sent during `i - 1` which
    /// lies in long-term epoch `lt`.
    fn st_registrations(&mut self, i: u64, lt: u64) -> Result<(), SimError> {
        for c in 0..self.cfg.n_clients {
            let online = self.rng.gen_bool(self.cfg.online_probability);
            if !online || !self.present(c, lt) {
                continue;
            }
            let msg = presence_message(c, i);
            let mut link = CountingLink::new(&mut self.net, &mut self.links[c]);
            self.clients[c]
                .register_short_term(&mut link, i, &msg)
                .map_err(Self::client_err(c, i - 1))?;
            self.st_online.insert((c, i), msg);
        }
        Ok(())
    }

    fn metered_lookup(&mut self, c: usize, tier: Tier, epoch: u64) {
        let meta = *self.net.lookup(tier)[0]
            .database(epoch)
            .expect("metered epochs are retained")
            .meta();
        let (sent, received) = lookup_frame_bytes(&meta, self.cfg.n_fmax);
        for k in 0..self.cfg.n_lookup {
            let q = self.cfg.n_fmax as u64;
            self.net
                .account(Dest::Lookup(tier, k), epoch, sent, received, 1 + q, q);
            self.links[c].add(tier, epoch, sent, received);
        }
    }

    fn lt_lookups(&mut self, e: u64) -> Result<(), SimError> {
        for c in 0..self.cfg.n_clients {
            if !self.present(c, e) {
                if c < self.probes && !self.twins.contains_key(&c) {
                    self.twins.insert(c, self.clients[c].clone());
                }
                if let Some(twin) = self.twins.get_mut(&c) {
                    self.net.set_accounting(false);
                    let r = twin.lookup_long_term(&mut self.net, e);
                    self.net.set_accounting(true);
                    r.map_err(Self::client_err(c, e))?;
                }
                continue;
            }
            let mut from = e;
            while from > 1 && !self.present(c, from - 1) {
                from -= 1;
            }
            let returning = from < e;
            if c >= self.probes {
                for j in from..=e {
                    self.metered_lookup(c, Tier::Long, j);
                }
                continue;
            }

            let before = self.clients[c].following().clone();
            let mut link = CountingLink::new(&mut self.net, &mut self.links[c]);
            let reports = if returning {
                self.clients[c]
                    .catch_up(&mut link, e)
                    .map_err(Self::client_err(c, e))?
            } else {
                vec![self.clients[c]
                    .lookup_long_term(&mut link, e)
                    .map_err(Self::client_err(c, e))?]
            };
            for (j, report) in (from..=e).zip(reports) {
                self.check_lt_report(c, j, &report);
            }
            self.record_revoked_views(c, &before);

            if returning {
                if let Some(mut twin) = self.twins.remove(&c) {
                    self.net.set_accounting(false);
                    let r = twin.lookup_long_term(&mut self.net, e);
                    self.net.set_accounting(true);
                    r.map_err(Self::client_err(c, e))?;
                    self.checks.catch_ups += 1;
                    let me = &self.clients[c];
                    if twin.following() != me.following()
                        || twin.lt_checked_through() != me.lt_checked_through()
                    {
                        self.checks.catch_up_mismatches += 1;
                        self.checks.note(format!(
                            "client {c}: state after catch-up to {e} differs from twin"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn expected_lt(&self, f: usize, a: usize, j: u64) -> LtOutcome {
        match self.revoked_at.get(&(f, a)) {
            Some(&r) if r == j => LtOutcome::Terminated(TerminationReason::SelfRevoked),
            _ if self.lt_registered.contains(&(a, j)) => LtOutcome::Updated,
            _ => LtOutcome::NotFound,
        }
    }

    fn check_lt_report(&mut self, f: usize, j: u64, report: &BTreeMap<String, LtOutcome>) {
        let expected: BTreeMap<String, LtOutcome> = self.following[f]
            .iter()
            .filter(|&&a| self.revoked_at.get(&(f, a)).is_none_or(|&r| r >= j))
            .map(|&a| (label(a), self.expected_lt(f, a, j)))
            .collect();
        self.checks.lt_reports += expected.len() as u64;
        for (l, want) in &expected {
            let got = report.get(l);
            if got != Some(want) {
                self.checks.lt_mismatches += 1;
                self.checks.note(format!(
                    "client {f} epoch {j} friend {l}: got {got:?}, want {want:?}"
                ));
            }
        }
        for l in report.keys().filter(|l| !expected.contains_key(*l)) {
            self.checks.lt_mismatches += 1;
            self.checks
                .note(format!("client {f} epoch {j}: unexpected report for {l}"));
        }
    }

    fn record_revoked_views(&mut self, f: usize, before: &BTreeMap<String, FriendState>) {
        for &a in &self.following[f] {
            let l = label(a);
            let newly = before.get(&l).is_some_and(FriendState::is_active)
                && self.clients[f]
                    .following()
                    .get(&l)
                    .is_some_and(|s| !s.is_active());
            if !newly {
                continue;
            }
            let Some(&from_lt) = self.revoked_at.get(&(f, a)) else {
                continue;
            };
            // The last presence key the follower could have learned.
            let p = self.clients[a]
                .keys_by_epoch()
                .range(..from_lt)
                .next_back()
                .map(|(_, k)| k.presence_pub)
                .expect("epoch-0 keys exist");
            self.revoked_views.push(RevokedView {
                follower: f,
                publisher: a,
                from_lt,
                dk: self.clients[f].following()[&l].dk,
                presence_pub: p,
            });
        }
    }

    /// Revoked followers try their stale key on the publisher's record for
    /// `j`, fetched straight from a lookup server.
    fn revoked_lt_oracle(&mut self, j: u64) {
        let Ok(db) = self.net.lookup(Tier::Long)[0].database(j) else {
            return;
        };
        for v in self.revoked_views.iter().filter(|v| v.from_lt <= j) {
            if !self.lt_registered.contains(&(v.publisher, j)) {
                continue;
            }
            let prev_pk = self.clients[v.publisher]
                .keys_by_epoch()
                .range(..j)
                .next_back()
                .map(|(_, k)| k.lt_public())
                .expect("registered clients have earlier keys");
            let value = db
                .get(&records::lt_record_id(&prev_pk))
                .expect("registered record is stored");
            let rec = LongTermRecord::from_stored(&prev_pk, value, self.cfg.n_rev)
                .expect("stored record parses");
            self.checks.revoked_attempts += 1;
            if records::open_lt_record(&rec, &v.dk, j).is_ok() {
                self.checks.revoked_decryptions += 1;
                self.checks.note(format!(
                    "client {} opened epoch {j} record of client {} after revocation",
                    v.follower, v.publisher
                ));
            }
        }
    }

    /// Revoked followers try their last presence key on the publisher's
    /// short-term record for `i`.
    fn revoked_st_oracle(&mut self, i: u64) {
        let lt = self.ccfg.lt_of_st(i);
        let Ok(db) = self.net.lookup(Tier::Short)[0].database(i) else {
            return;
        };
        for v in self.revoked_views.iter().filter(|v| v.from_lt <= lt) {
            if !self.st_online.contains_key(&(v.publisher, i)) {
                continue;
            }
            let p = self.clients[v.publisher]
                .keys_by_epoch()
                .range(..=lt)
                .next_back()
                .map(|(_, k)| k.presence_pub)
                .expect("keys exist");
            let ct = db
                .get(&records::st_record_id_from_pub(&p, i))
                .expect("registered record is stored");
            self.checks.revoked_attempts += 1;
            let located = db
                .get(&records::st_record_id_from_pub(&v.presence_pub, i))
                .is_some();
            if located || records::open_st_ct(&v.presence_pub, i, ct).is_ok() {
                self.checks.revoked_decryptions += 1;
                self.checks.note(format!(
                    "client {} read short-term epoch {i} presence of client {} after revocation",
                    v.follower, v.publisher
                ));
            }
        }
    }

    fn expected_presence(&self, f: usize, a: usize, i: u64) -> Presence {
        let lt = self.ccfg.lt_of_st(i);
        if self.revoked_at.get(&(f, a)).is_some_and(|&r| r <= lt) {
            return Presence::Unknown;
        }
        match self.st_online.get(&(a, i)) {
            Some(msg) => Presence::Online(msg.clone()),
            None => Presence::Offline,
        }
    }

    fn st_lookups(&mut self, i: u64, lt: u64) -> Result<(), SimError> {
        for c in 0..self.cfg.n_clients {
            if !self.present(c, lt) {
                continue;
            }
            if c >= self.probes {
                self.metered_lookup(c, Tier::Short, i);
                continue;
            }
            let mut link = CountingLink::new(&mut self.net, &mut self.links[c]);
            let report = self.clients[c]
                .lookup_short_term(&mut link, i)
                .map_err(Self::client_err(c, i))?;
            for &a in &self.following[c] {
                let want = self.expected_presence(c, a, i);
                let got = report.get(&label(a));
                self.checks.presence_reports += 1;
                if got != Some(&want) {
                    self.checks.presence_mismatches += 1;
                    self.checks.note(format!(
                        "client {c} epoch {i} friend {a}: got {got:?}, want {want:?}"
                    ));
                }
            }
        }
        Ok(())
    }

    fn rows(&mut self) -> Vec<MetricsRow> {
        let n = self.cfg.n_clients;
        let dp5 = dp5_baseline(n, self.cfg.n_fmax, self.cfg.dp5_record_len);
        let mut rows = Vec::new();
        let epochs: Vec<(Tier, u64)> = self
            .published
            .keys()
            .copied()
            .filter(|&(tier, e)| match tier {
                Tier::Long => e <= self.cfg.lt_epochs,
                Tier::Short => e < (self.cfg.lt_epochs + 1) * self.cfg.st_epochs_per_lt,
            })
            .collect();
        for (tier, e) in epochs {
            let (db_bytes, db_records) = self.published[&(tier, e)];
            let reg = self.net.traffic(Dest::Registration(tier), e);
            let lookup = self
                .net
                .traffic_where(tier, e, |d| matches!(d, Dest::Lookup(..)));
            let (sent, received) = self
                .links
                .iter()
                .map(|l| l.get(tier, e))
                .fold((0u64, 0u64), |acc, x| (acc.0 + x.0, acc.1 + x.1));
            if sent != reg.to_server + lookup.to_server
                || received != reg.from_server + lookup.from_server
            {
                self.checks.conservation_violations += 1;
                self.checks.note(format!(
                    "{tier} epoch {e}: client and server byte totals differ"
                ));
            }
            let long = tier == Tier::Long;
            rows.push(MetricsRow {
                n,
                epoch_kind: tier,
                epoch_index: e,
                db_bytes,
                db_records,
                reg_server_in_bytes: reg.to_server,
                lookup_server_in_bytes: lookup.to_server,
                lookup_server_out_bytes: lookup.from_server,
                client_in_bytes: received as f64 / n.max(1) as f64,
                client_out_bytes: sent as f64 / n.max(1) as f64,
                dp5_baseline_records: long.then_some(dp5.records),
                dp5_baseline_bytes: long.then_some(dp5.bytes),
            });
        }
        rows.sort_by_key(|r| (r.epoch_kind, r.epoch_index));
        rows
    }
}

//! On-disk client state.
//!
//! `"MP3K" | version(2) | body`, integers big-endian, labels as
//! `len(2) | utf8`. Version 1 body: config, manager key, own keys by epoch,
//! pending revocations, followers, followed friends, lookup position, RNG
//! state.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::broadcast::{DecryptionKey, ManagerKey, DECRYPTION_KEY_LEN};
use crate::client::{Client, ClientConfig, FriendState, FriendStatus, TerminationReason};
use crate::group::{G1Elem, G2Elem, Scalar, G1_LEN, G2_LEN, SCALAR_LEN};
use crate::primitives::{LtSigKeypair, LT_PK_LEN};
use crate::records::ClientEpochKeys;

pub const MAGIC: &[u8; 4] = b"MP3K";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum KeystoreError {
    #[error("not a key store (bad magic)")]
    BadMagic,
    #[error("unsupported key store version {0}")]
    UnsupportedVersion(u16),
    #[error("key store truncated")]
    Truncated,
    #[error("corrupt key store: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_be_bytes());
    }
    fn label(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], KeystoreError> {
        if self.0.len() < n {
            return Err(KeystoreError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], KeystoreError> {
        Ok(self.take(N)?.try_into().expect("took N bytes"))
    }
    fn u8(&mut self) -> Result<u8, KeystoreError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, KeystoreError> {
        Ok(u16::from_be_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, KeystoreError> {
        Ok(u32::from_be_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, KeystoreError> {
        Ok(u64::from_be_bytes(self.array()?))
    }
    fn label(&mut self) -> Result<String, KeystoreError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| KeystoreError::Corrupt("label is not utf-8".into()))
    }
    fn scalar(&mut self) -> Result<Scalar, KeystoreError> {
        Scalar::from_bytes(self.take(SCALAR_LEN)?).map_err(corrupt)
    }
}

fn corrupt<E: std::fmt::Display>(e: E) -> KeystoreError {
    KeystoreError::Corrupt(e.to_string())
}

pub fn encode(client: &Client) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.bytes(MAGIC);
    w.u16(VERSION);

    let c = &client.cfg;
    w.u32(c.n_fmax as u32);
    w.u32(c.n_rev as u32);
    w.u32(c.t as u32);
    w.u32(c.n_lookup as u32);
    w.u32(c.h_keep as u32);
    w.u64(c.st_per_lt);

    let mk = &client.mk;
    w.bytes(&mk.g().to_bytes());
    w.bytes(&mk.h().to_bytes());
    w.bytes(&mk.gamma().to_bytes());
    w.u32(mk.granted().len() as u32);
    for x in mk.granted() {
        w.bytes(&x.to_bytes());
    }

    w.u32(client.keys_by_epoch.len() as u32);
    for (j, k) in &client.keys_by_epoch {
        w.u64(*j);
        w.bytes(&k.lt.private());
        w.bytes(&k.presence_priv.to_bytes());
    }

    w.u32(client.pending_revocations.len() as u32);
    for x in &client.pending_revocations {
        w.bytes(&x.to_bytes());
    }

    w.u32(client.followers.len() as u32);
    for (label, x) in &client.followers {
        w.label(label);
        w.bytes(&x.to_bytes());
    }

    w.u32(client.following.len() as u32);
    for (label, f) in &client.following {
        w.label(label);
        w.bytes(&f.dk.to_bytes());
        w.bytes(&f.known_lt_pk);
        match &f.known_presence_pub {
            Some(p) => {
                w.u8(1);
                w.bytes(&p.to_bytes());
            }
            None => w.u8(0),
        }
        w.u64(f.last_processed_lt_epoch);
        w.u8(match f.status {
            FriendStatus::Active => 0,
            FriendStatus::Terminated(TerminationReason::SelfRevoked) => 1,
            FriendStatus::Terminated(TerminationReason::AuthFailure) => 2,
        });
    }

    w.u64(client.lt_checked_through);
    w.bytes(&client.rng.get_seed());
    w.bytes(&client.rng.get_word_pos().to_be_bytes());
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Client, KeystoreError> {
    let mut r = Reader(bytes);
    if r.take(4).map_err(|_| KeystoreError::BadMagic)? != MAGIC {
        return Err(KeystoreError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(KeystoreError::UnsupportedVersion(version));
    }

    let cfg = ClientConfig {
        n_fmax: r.u32()? as usize,
        n_rev: r.u32()? as usize,
        t: r.u32()? as usize,
        n_lookup: r.u32()? as usize,
        h_keep: r.u32()? as usize,
        st_per_lt: r.u64()?,
    };
    if cfg.st_per_lt == 0 {
        return Err(KeystoreError::Corrupt(
            "zero short-term epochs per long-term epoch".into(),
        ));
    }

    let g = G1Elem::from_bytes(r.take(G1_LEN)?).map_err(corrupt)?;
    let h = G2Elem::from_bytes(r.take(G2_LEN)?).map_err(corrupt)?;
    let gamma = r.scalar()?;
    let granted = (0..r.u32()?)
        .map(|_| r.scalar())
        .collect::<Result<Vec<_>, _>>()?;
    let mk = ManagerKey::from_parts(g, h, gamma, granted).map_err(corrupt)?;

    let mut keys_by_epoch = std::collections::BTreeMap::new();
    for _ in 0..r.u32()? {
        let j = r.u64()?;
        let lt = LtSigKeypair::from_private(&r.array()?);
        let y = r.scalar()?;
        keys_by_epoch.insert(j, ClientEpochKeys::from_parts(lt, y));
    }
    if keys_by_epoch.is_empty() {
        return Err(KeystoreError::Corrupt("no epoch keys".into()));
    }

    let pending_revocations = (0..r.u32()?)
        .map(|_| r.scalar())
        .collect::<Result<Vec<_>, _>>()?;

    let mut followers = std::collections::BTreeMap::new();
    for _ in 0..r.u32()? {
        let label = r.label()?;
        followers.insert(label, r.scalar()?);
    }

    let mut following = std::collections::BTreeMap::new();
    for _ in 0..r.u32()? {
        let label = r.label()?;
        let dk = DecryptionKey::from_bytes(r.take(DECRYPTION_KEY_LEN)?).map_err(corrupt)?;
        let known_lt_pk: [u8; LT_PK_LEN] = r.array()?;
        let known_presence_pub = match r.u8()? {
            0 => None,
            1 => Some(G1Elem::from_bytes(r.take(G1_LEN)?).map_err(corrupt)?),
            b => return Err(KeystoreError::Corrupt(format!("presence flag {b}"))),
        };
        let last_processed_lt_epoch = r.u64()?;
        let status = match r.u8()? {
            0 => FriendStatus::Active,
            1 => FriendStatus::Terminated(TerminationReason::SelfRevoked),
            2 => FriendStatus::Terminated(TerminationReason::AuthFailure),
            b => return Err(KeystoreError::Corrupt(format!("friend status {b}"))),
        };
        following.insert(
            label,
            FriendState {
                dk,
                known_lt_pk,
                known_presence_pub,
                last_processed_lt_epoch,
                status,
            },
        );
    }

    let lt_checked_through = r.u64()?;
    let mut rng = ChaCha20Rng::from_seed(r.array()?);
    rng.set_word_pos(u128::from_be_bytes(r.array()?));
    if !r.0.is_empty() {
        return Err(KeystoreError::Corrupt("trailing bytes".into()));
    }

    Ok(Client {
        cfg,
        mk,
        keys_by_epoch,
        pending_revocations,
        followers,
        following,
        lt_checked_through,
        rng,
    })
}

pub fn load(path: &Path) -> Result<Client, KeystoreError> {
    decode(&fs::read(path)?)
}

/// Writes via a temporary file in the same directory, then renames.
pub fn save(path: &Path, client: &Client) -> Result<(), KeystoreError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("keystore")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(client))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

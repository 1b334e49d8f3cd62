use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use super::PirError;
use crate::primitives::{Identifier, ID_LEN};

/// Number of bucket-hash keys tried per build.
pub const BUCKET_KEY_CANDIDATES: usize = 10;
pub const META_LEN: usize = 8 + 4 + 4 + 4 + 4 + 32;

/// Public description of one epoch's database, identical at every honest
/// lookup server.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PirMeta {
    pub epoch_id: u64,
    pub num_buckets: u32,
    pub entries_per_bucket: u32,
    pub entry_len: u32,
    pub bucket_bytes: u32,
    pub bucket_prf_key: [u8; 32],
}

impl PirMeta {
    pub fn value_len(&self) -> usize {
        self.entry_len as usize - ID_LEN
    }

    /// `epoch_id(8) | r(4) | entries_per_bucket(4) | entry_len(4) | bucket_bytes(4) | key(32)`,
    /// integers big-endian.
    pub fn to_bytes(&self) -> [u8; META_LEN] {
        let mut out = [0u8; META_LEN];
        out[0..8].copy_from_slice(&self.epoch_id.to_be_bytes());
        out[8..12].copy_from_slice(&self.num_buckets.to_be_bytes());
        out[12..16].copy_from_slice(&self.entries_per_bucket.to_be_bytes());
        out[16..20].copy_from_slice(&self.entry_len.to_be_bytes());
        out[20..24].copy_from_slice(&self.bucket_bytes.to_be_bytes());
        out[24..56].copy_from_slice(&self.bucket_prf_key);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PirError> {
        if bytes.len() != META_LEN {
            return Err(PirError::Malformed(format!(
                "meta is {} bytes",
                bytes.len()
            )));
        }
        let u32_at = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().expect("slice of 4"));
        let meta = PirMeta {
            epoch_id: u64::from_be_bytes(bytes[0..8].try_into().expect("slice of 8")),
            num_buckets: u32_at(8),
            entries_per_bucket: u32_at(12),
            entry_len: u32_at(16),
            bucket_bytes: u32_at(20),
            bucket_prf_key: bytes[24..56].try_into().expect("slice of 32"),
        };
        if meta.num_buckets == 0
            || (meta.entry_len as usize) <= ID_LEN
            || meta.entries_per_bucket as u64 * meta.entry_len as u64 != meta.bucket_bytes as u64
        {
            return Err(PirError::Malformed("inconsistent meta".into()));
        }
        Ok(meta)
    }
}

/// Bucket-hash `Π^{(r)}`: HMAC-SHA256 keyed by the epoch's bucket key, first
/// 8 bytes big-endian, reduced mod `r`.
pub fn bucket_index(key: &[u8; 32], num_buckets: u32, id: &Identifier) -> usize {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("any key length");
    mac.update(id.as_bytes());
    let out = mac.finalize().into_bytes();
    let v = u64::from_be_bytes(out[..8].try_into().expect("digest is 32 bytes"));
    (v % num_buckets as u64) as usize
}

pub fn bucket_of(meta: &PirMeta, id: &Identifier) -> usize {
    bucket_index(&meta.bucket_prf_key, meta.num_buckets, id)
}

/// `⌈√v⌉` in integers.
pub fn ceil_sqrt(v: u64) -> u64 {
    if v == 0 {
        return 0;
    }
    let mut r = (v as f64).sqrt() as u64;
    while r * r < v {
        r += 1;
    }
    while r > 1 && (r - 1) * (r - 1) >= v {
        r -= 1;
    }
    r
}

/// `r = ⌈√(n·s)⌉`, and a single bucket for an empty database.
pub fn bucket_count(n: usize, value_len: usize) -> u32 {
    if n == 0 {
        return 1;
    }
    ceil_sqrt(n as u64 * value_len as u64) as u32
}

/// Largest bucket load when hashing `ids` under `key` into `r` buckets.
pub fn max_load(key: &[u8; 32], r: u32, ids: &[Identifier]) -> usize {
    let mut loads = vec![0usize; r as usize];
    for id in ids {
        loads[bucket_index(key, r, id)] += 1;
    }
    loads.into_iter().max().unwrap_or(0)
}

/// Padded bucket matrix: `r` rows of `bucket_bytes`, each a sorted run of
/// `id | value` entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PirDatabase {
    meta: PirMeta,
    data: Vec<u8>,
}

impl PirDatabase {
    pub fn meta(&self) -> &PirMeta {
        &self.meta
    }

    pub fn bucket(&self, c: usize) -> &[u8] {
        let bb = self.meta.bucket_bytes as usize;
        &self.data[c * bb..(c + 1) * bb]
    }

    pub fn buckets(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks_exact(self.meta.bucket_bytes as usize)
    }

    /// Payload size (all buckets, excluding meta).
    pub fn data_len(&self) -> usize {
        self.data.len()
    }

    /// Transfer format: `meta | buckets`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(META_LEN + self.data.len());
        out.extend_from_slice(&self.meta.to_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PirError> {
        if bytes.len() < META_LEN {
            return Err(PirError::Malformed("database shorter than meta".into()));
        }
        let meta = PirMeta::from_bytes(&bytes[..META_LEN])?;
        let data = bytes[META_LEN..].to_vec();
        if data.len() != meta.num_buckets as usize * meta.bucket_bytes as usize {
            return Err(PirError::Malformed(
                "bucket data does not match meta".into(),
            ));
        }
        Ok(PirDatabase { meta, data })
    }

    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.meta.to_bytes());
        h.update(&self.data);
        h.finalize().into()
    }

    /// Plain (non-private) lookup, used as the oracle in tests and audits.
    pub fn get(&self, id: &Identifier) -> Option<&[u8]> {
        let c = bucket_of(&self.meta, id);
        super::scan_bucket(self.bucket(c), id, self.meta.entry_len as usize).ok()
    }
}

fn check_entries(entries: &[(Identifier, Vec<u8>)], value_len: usize) -> Result<(), PirError> {
    if value_len == 0 {
        return Err(PirError::ValueLength {
            expected: 1,
            got: 0,
        });
    }
    let mut ids: Vec<&Identifier> = entries.iter().map(|(id, _)| id).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(PirError::DuplicateKey);
    }
    if let Some((_, v)) = entries.iter().find(|(_, v)| v.len() != value_len) {
        return Err(PirError::ValueLength {
            expected: value_len,
            got: v.len(),
        });
    }
    Ok(())
}

/// Draws [`BUCKET_KEY_CANDIDATES`] bucket keys and builds with the one whose
/// largest bucket is smallest.
pub fn build_database<R: RngCore + CryptoRng>(
    entries: &[(Identifier, Vec<u8>)],
    value_len: usize,
    epoch_id: u64,
    rng: &mut R,
) -> Result<PirDatabase, PirError> {
    let candidates: Vec<[u8; 32]> = (0..BUCKET_KEY_CANDIDATES)
        .map(|_| {
            let mut k = [0u8; 32];
            rng.fill_bytes(&mut k);
            k
        })
        .collect();
    build_database_with_candidates(entries, value_len, epoch_id, &candidates, rng)
}

/// Same as [`build_database`] with caller-chosen candidate keys. Ties go to
/// the earliest candidate. `rng` supplies dummy entries.
pub fn build_database_with_candidates<R: RngCore + CryptoRng>(
    entries: &[(Identifier, Vec<u8>)],
    value_len: usize,
    epoch_id: u64,
    candidates: &[[u8; 32]],
    rng: &mut R,
) -> Result<PirDatabase, PirError> {
    check_entries(entries, value_len)?;
    if candidates.is_empty() {
        return Err(PirError::Malformed("no bucket key candidates".into()));
    }
    let n = entries.len();
    let r = bucket_count(n, value_len);
    let ids: Vec<Identifier> = entries.iter().map(|(id, _)| *id).collect();

    let mut best = (usize::MAX, candidates[0]);
    for key in candidates {
        let load = max_load(key, r, &ids);
        if load < best.0 {
            best = (load, *key);
        }
    }
    let (max_bucket, key) = best;
    let per_bucket = max_bucket.max(1);
    let entry_len = ID_LEN + value_len;

    let mut rows: Vec<Vec<(Identifier, &[u8])>> = vec![Vec::new(); r as usize];
    for (id, v) in entries {
        rows[bucket_index(&key, r, id)].push((*id, v.as_slice()));
    }

    let mut dummy_value = vec![0u8; value_len];
    let mut data = Vec::with_capacity(r as usize * per_bucket * entry_len);
    for row in &mut rows {
        let mut bucket: Vec<Vec<u8>> = row
            .iter()
            .map(|(id, v)| {
                let mut e = Vec::with_capacity(entry_len);
                e.extend_from_slice(id.as_bytes());
                e.extend_from_slice(v);
                e
            })
            .collect();
        while bucket.len() < per_bucket {
            let id = Identifier::random(rng);
            rng.fill_bytes(&mut dummy_value);
            let mut e = Vec::with_capacity(entry_len);
            e.extend_from_slice(id.as_bytes());
            e.extend_from_slice(&dummy_value);
            bucket.push(e);
        }
        bucket.sort_by(|a, b| a[..ID_LEN].cmp(&b[..ID_LEN]));
        for e in bucket {
            data.extend_from_slice(&e);
        }
    }

    let meta = PirMeta {
        epoch_id,
        num_buckets: r,
        entries_per_bucket: per_bucket as u32,
        entry_len: entry_len as u32,
        bucket_bytes: (per_bucket * entry_len) as u32,
        bucket_prf_key: key,
    };
    Ok(PirDatabase { meta, data })
}

//! Hash-bucketed keyword PIR over `N_lookup` servers.
//!
//! Records live in `r = ⌈√(n·s)⌉` buckets. A client Shamir-shares the
//! indicator vector of its target bucket over GF(2^8) (degree `t`, server `k`
//! evaluated at `k + 1`); each server returns the share-weighted XOR of all
//! buckets, and any `t + 1` responses interpolate to the bucket. Extra
//! responses are used to detect, not correct, a misbehaving server.

mod database;
pub mod gf256;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

pub use database::{
    bucket_count, bucket_index, bucket_of, build_database, build_database_with_candidates,
    ceil_sqrt, max_load, PirDatabase, PirMeta, BUCKET_KEY_CANDIDATES, META_LEN,
};

use crate::primitives::{Identifier, ID_LEN};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PirError {
    #[error("duplicate identifier in database build")]
    DuplicateKey,
    #[error("value length {got}, expected {expected}")]
    ValueLength { expected: usize, got: usize },
    #[error("privacy level t={t} unusable with {n_servers} servers")]
    BadPrivacyLevel { t: usize, n_servers: usize },
    #[error("query has {got} coordinates, database has {expected} buckets")]
    BadQuery { expected: usize, got: usize },
    #[error("bucket index {index} out of range for {buckets} buckets")]
    BadBucket { index: usize, buckets: usize },
    #[error("need {need} responses, have {have}")]
    NotEnoughServers { need: usize, have: usize },
    #[error("identifier not in bucket")]
    NotFound,
    #[error("bad responses: {0}")]
    BadResponse(String),
    #[error("malformed: {0}")]
    Malformed(String),
}

/// One server's share vector: `r` field elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PirQuery(pub Vec<u8>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PirResponse(pub Vec<u8>);

/// Outcome of cross-checking redundant responses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Consistency {
    /// All responses beyond the first `t + 1` agree. With exactly `t + 1`
    /// responses nothing can be checked and this is reported as well.
    Ok,
    /// Responses from these servers disagree with the interpolation of the
    /// first `t + 1`.
    Inconsistent { servers: Vec<usize> },
}

/// Evaluation point of server `k`.
fn server_point(k: usize) -> u8 {
    (k + 1) as u8
}

/// `t = 0` is the degenerate non-private case; otherwise one redundant server
/// beyond reconstruction is required so that tampering is detectable.
pub fn check_privacy_level(t: usize, n_servers: usize) -> Result<(), PirError> {
    let ok = (1..=255).contains(&n_servers) && if t == 0 { true } else { t + 2 <= n_servers };
    if ok {
        Ok(())
    } else {
        Err(PirError::BadPrivacyLevel { t, n_servers })
    }
}

/// Splits the indicator of `bucket_index` into `n_servers` share vectors.
pub fn make_query<R: RngCore + CryptoRng>(
    meta: &PirMeta,
    bucket_index: usize,
    t: usize,
    n_servers: usize,
    rng: &mut R,
) -> Result<Vec<PirQuery>, PirError> {
    check_privacy_level(t, n_servers)?;
    let r = meta.num_buckets as usize;
    if bucket_index >= r {
        return Err(PirError::BadBucket {
            index: bucket_index,
            buckets: r,
        });
    }
    let mut shares = vec![vec![0u8; r]; n_servers];
    let mut coeffs = vec![0u8; t + 1];
    for c in 0..r {
        coeffs[0] = u8::from(c == bucket_index);
        rng.fill_bytes(&mut coeffs[1..]);
        for (k, share) in shares.iter_mut().enumerate() {
            share[c] = gf256::eval_poly(&coeffs, server_point(k));
        }
    }
    Ok(shares.into_iter().map(PirQuery).collect())
}

/// `Σ_c q[c] · bucket_c` with byte-wise GF(2^8) arithmetic.
pub fn answer_query(db: &PirDatabase, q: &PirQuery) -> Result<PirResponse, PirError> {
    let r = db.meta().num_buckets as usize;
    if q.0.len() != r {
        return Err(PirError::BadQuery {
            expected: r,
            got: q.0.len(),
        });
    }
    let mut acc = vec![0u8; db.meta().bucket_bytes as usize];
    for (&s, bucket) in q.0.iter().zip(db.buckets()) {
        match s {
            0 => {}
            1 => acc.iter_mut().zip(bucket).for_each(|(a, &b)| *a ^= b),
            _ => {
                let row = gf256::mul_row(s);
                acc.iter_mut()
                    .zip(bucket)
                    .for_each(|(a, &b)| *a ^= row[b as usize]);
            }
        }
    }
    Ok(PirResponse(acc))
}

fn combine(coeffs: &[u8], rows: &[&[u8]], len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    for (&l, row) in coeffs.iter().zip(rows) {
        let m = gf256::mul_row(l);
        out.iter_mut()
            .zip(row.iter())
            .for_each(|(o, &y)| *o ^= m[y as usize]);
    }
    out
}

/// Interpolates the bucket from the first `t + 1` responses and checks any
/// further responses against the same degree-`t` polynomials.
pub fn reconstruct(
    responses: &[(usize, PirResponse)],
    t: usize,
) -> Result<(Vec<u8>, Consistency), PirError> {
    let need = t + 1;
    if responses.len() < need {
        return Err(PirError::NotEnoughServers {
            need,
            have: responses.len(),
        });
    }
    let len = responses[0].1 .0.len();
    if responses.iter().any(|(_, r)| r.0.len() != len) {
        return Err(PirError::BadResponse("responses differ in length".into()));
    }
    let mut seen: Vec<usize> = responses.iter().map(|(k, _)| *k).collect();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) || seen.iter().any(|&k| k >= 255) {
        return Err(PirError::BadResponse(
            "duplicate or out-of-range server index".into(),
        ));
    }

    let (base, extra) = responses.split_at(need);
    let xs: Vec<u8> = base.iter().map(|(k, _)| server_point(*k)).collect();
    let rows: Vec<&[u8]> = base.iter().map(|(_, r)| r.0.as_slice()).collect();
    let bucket = combine(&gf256::lagrange_at(&xs, 0), &rows, len);

    let bad: Vec<usize> = extra
        .iter()
        .filter(|(k, resp)| {
            combine(&gf256::lagrange_at(&xs, server_point(*k)), &rows, len) != resp.0
        })
        .map(|(k, _)| *k)
        .collect();
    let consistency = if bad.is_empty() {
        Consistency::Ok
    } else {
        Consistency::Inconsistent { servers: bad }
    };
    Ok((bucket, consistency))
}

/// Binary search of a sorted bucket for `id`; returns the value part.
pub fn scan_bucket<'a>(
    bucket: &'a [u8],
    id: &Identifier,
    entry_len: usize,
) -> Result<&'a [u8], PirError> {
    if entry_len <= ID_LEN || !bucket.len().is_multiple_of(entry_len) {
        return Err(PirError::Malformed(
            "bucket is not a whole number of entries".into(),
        ));
    }
    let entries: Vec<&[u8]> = bucket.chunks_exact(entry_len).collect();
    entries
        .binary_search_by(|e| e[..ID_LEN].cmp(id.as_bytes()))
        .map(|i| &entries[i][ID_LEN..])
        .map_err(|_| PirError::NotFound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn db(n: usize, s: usize, rng: &mut ChaCha20Rng) -> (PirDatabase, Vec<(Identifier, Vec<u8>)>) {
        let entries: Vec<(Identifier, Vec<u8>)> = (0..n)
            .map(|_| {
                let mut v = vec![0u8; s];
                rng.fill_bytes(&mut v);
                (Identifier::random(rng), v)
            })
            .collect();
        (build_database(&entries, s, 1, rng).unwrap(), entries)
    }

    #[test]
    fn t_zero_is_plain_selection() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (db, _) = db(40, 16, &mut rng);
        let qs = make_query(db.meta(), 3, 0, 3, &mut rng).unwrap();
        for q in &qs {
            let expect: Vec<u8> = (0..db.meta().num_buckets as usize)
                .map(|c| u8::from(c == 3))
                .collect();
            assert_eq!(q.0, expect);
            assert_eq!(answer_query(&db, q).unwrap().0, db.bucket(3));
        }
    }

    #[test]
    fn zero_query_gives_zero_response() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (db, _) = db(40, 16, &mut rng);
        let q = PirQuery(vec![0; db.meta().num_buckets as usize]);
        assert!(answer_query(&db, &q).unwrap().0.iter().all(|&b| b == 0));
        assert_eq!(
            answer_query(&db, &PirQuery(vec![0; 2])),
            Err(PirError::BadQuery {
                expected: db.meta().num_buckets as usize,
                got: 2
            })
        );
    }

    #[test]
    fn answers_are_linear() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (db, _) = db(60, 24, &mut rng);
        let r = db.meta().num_buckets as usize;
        for _ in 0..10 {
            let mut q1 = vec![0u8; r];
            let mut q2 = vec![0u8; r];
            rng.fill_bytes(&mut q1);
            rng.fill_bytes(&mut q2);
            let a = (rng.next_u32() & 0xff) as u8;
            let combined: Vec<u8> = q1
                .iter()
                .zip(&q2)
                .map(|(&x, &y)| x ^ gf256::mul(a, y))
                .collect();
            let lhs = answer_query(&db, &PirQuery(combined)).unwrap().0;
            let r1 = answer_query(&db, &PirQuery(q1)).unwrap().0;
            let r2 = answer_query(&db, &PirQuery(q2)).unwrap().0;
            let rhs: Vec<u8> = r1
                .iter()
                .zip(&r2)
                .map(|(&x, &y)| x ^ gf256::mul(a, y))
                .collect();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn honest_round_trip_and_any_subset() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (db, entries) = db(100, 32, &mut rng);
        for (id, value) in entries.iter().take(20) {
            let b = bucket_of(db.meta(), id);
            let qs = make_query(db.meta(), b, 1, 4, &mut rng).unwrap();
            let resp: Vec<(usize, PirResponse)> = qs
                .iter()
                .enumerate()
                .map(|(k, q)| (k, answer_query(&db, q).unwrap()))
                .collect();
            let (bucket, c) = reconstruct(&resp, 1).unwrap();
            assert_eq!(c, Consistency::Ok);
            assert_eq!(bucket, db.bucket(b));
            assert_eq!(
                scan_bucket(&bucket, id, db.meta().entry_len as usize).unwrap(),
                &value[..]
            );
            // Any two servers suffice.
            let (bucket, _) = reconstruct(&[resp[3].clone(), resp[1].clone()], 1).unwrap();
            assert_eq!(bucket, db.bucket(b));
        }
    }

    #[test]
    fn corruption_is_detected() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (db, _) = db(100, 32, &mut rng);
        let qs = make_query(db.meta(), 7, 1, 3, &mut rng).unwrap();
        let mut resp: Vec<(usize, PirResponse)> = qs
            .iter()
            .enumerate()
            .map(|(k, q)| (k, answer_query(&db, q).unwrap()))
            .collect();
        resp[2].1 .0[5] ^= 0x10;
        let (_, c) = reconstruct(&resp, 1).unwrap();
        assert_eq!(c, Consistency::Inconsistent { servers: vec![2] });
    }

    #[test]
    fn exactly_t_plus_one_is_unchecked() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let (db, _) = db(30, 16, &mut rng);
        let qs = make_query(db.meta(), 0, 1, 3, &mut rng).unwrap();
        let mut resp: Vec<(usize, PirResponse)> = qs
            .iter()
            .enumerate()
            .take(2)
            .map(|(k, q)| (k, answer_query(&db, q).unwrap()))
            .collect();
        resp[0].1 .0[0] ^= 1;
        let (bucket, c) = reconstruct(&resp, 1).unwrap();
        assert_eq!(c, Consistency::Ok);
        assert_ne!(bucket, db.bucket(0));
        assert_eq!(
            reconstruct(&resp[..1], 1),
            Err(PirError::NotEnoughServers { need: 2, have: 1 })
        );
    }

    #[test]
    fn privacy_level_bounds() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let (db, _) = db(10, 8, &mut rng);
        assert_eq!(
            make_query(db.meta(), 0, 2, 3, &mut rng),
            Err(PirError::BadPrivacyLevel { t: 2, n_servers: 3 })
        );
        assert!(make_query(db.meta(), 0, 1, 3, &mut rng).is_ok());
        assert!(make_query(db.meta(), 0, 0, 1, &mut rng).is_ok());
        assert!(matches!(
            make_query(db.meta(), 10_000, 1, 3, &mut rng),
            Err(PirError::BadBucket { .. })
        ));
    }

    #[test]
    fn single_share_is_uniform_exhaustively() {
        // For t = 1 the share at point x is s + a·x; as a ranges over the
        // field the share takes every value exactly once, whatever s is.
        for s in [0u8, 1] {
            for x in 1..=3u8 {
                let mut seen = [0u32; 256];
                for a in 0..=255u8 {
                    seen[gf256::eval_poly(&[s, a], x) as usize] += 1;
                }
                assert!(seen.iter().all(|&c| c == 1));
            }
        }
    }

    #[test]
    fn scan_missing_id() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let (db, _) = db(10, 8, &mut rng);
        let id = Identifier::random(&mut rng);
        let b = bucket_of(db.meta(), &id);
        assert_eq!(
            scan_bucket(db.bucket(b), &id, db.meta().entry_len as usize),
            Err(PirError::NotFound)
        );
    }
}

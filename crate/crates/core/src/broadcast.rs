//! Per-user dynamic broadcast encryption with constant-size ciphertexts and
//! decryption keys.
//!
//! The manager holds `(G, H, γ)`. A member key for `x` is
//! `(x, G^{x/(γ+x)}, H^{1/(γ+x)})`. Revoking `x` publishes `(x, H^{1/(γ+x)})`
//! and moves the manager to `H' = H^{1/(γ+x)}`; members re-derive their `B`
//! against `H'` from the published pair. The revoked member would need
//! `1/(x - x)`, so it can never follow.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::group::{
    pair_product, G1Elem, G2Elem, GroupError, GtElem, Scalar, G1_LEN, G2_LEN, SCALAR_LEN,
};

pub const DECRYPTION_KEY_LEN: usize = SCALAR_LEN + G1_LEN + G2_LEN;
pub const CIPHERTEXT_LEN: usize = G1_LEN + G2_LEN;
pub const REVOCATION_ENTRY_LEN: usize = SCALAR_LEN + G2_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BroadcastError {
    #[error("revocation would divide by zero (x = -gamma)")]
    DivisionByZero,
    #[error("decryption key was revoked by this list")]
    SelfRevoked,
    #[error("{requested} revocations exceed the per-epoch limit {limit}")]
    TooManyRevocations { requested: usize, limit: usize },
    #[error("x was never granted by this manager")]
    NotGranted,
    #[error("malformed encoding: {0}")]
    Decode(#[from] GroupError),
    #[error("revocation list length {got} does not match N_rev entries ({expected} bytes)")]
    BadListLength { expected: usize, got: usize },
}

/// Broadcast manager state: `(G, H, γ)` plus the `x` values handed out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManagerKey {
    g: G1Elem,
    h: G2Elem,
    gamma: Scalar,
    granted: Vec<Scalar>,
}

impl ManagerKey {
    pub fn g(&self) -> &G1Elem {
        &self.g
    }

    pub fn h(&self) -> &G2Elem {
        &self.h
    }

    pub fn gamma(&self) -> &Scalar {
        &self.gamma
    }

    pub fn granted(&self) -> &[Scalar] {
        &self.granted
    }

    /// Reassembles a manager key from stored parts, re-checking its invariants.
    pub fn from_parts(
        g: G1Elem,
        h: G2Elem,
        gamma: Scalar,
        granted: Vec<Scalar>,
    ) -> Result<Self, BroadcastError> {
        if gamma.is_zero() || h.is_identity() || g.is_identity() {
            return Err(GroupError::InvalidEncoding {
                kind: "manager key",
            }
            .into());
        }
        Ok(ManagerKey {
            g,
            h,
            gamma,
            granted,
        })
    }
}

/// A follower's key for one manager. `a` never changes; `b` tracks the
/// manager's current `H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecryptionKey {
    pub x: Scalar,
    pub a: G1Elem,
    pub b: G2Elem,
}

impl DecryptionKey {
    pub fn to_bytes(&self) -> [u8; DECRYPTION_KEY_LEN] {
        let mut out = [0u8; DECRYPTION_KEY_LEN];
        out[..SCALAR_LEN].copy_from_slice(&self.x.to_bytes());
        out[SCALAR_LEN..SCALAR_LEN + G1_LEN].copy_from_slice(&self.a.to_bytes());
        out[SCALAR_LEN + G1_LEN..].copy_from_slice(&self.b.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BroadcastError> {
        if bytes.len() != DECRYPTION_KEY_LEN {
            return Err(GroupError::BadLength {
                kind: "decryption key",
                expected: DECRYPTION_KEY_LEN,
                got: bytes.len(),
            }
            .into());
        }
        Ok(DecryptionKey {
            x: Scalar::from_bytes(&bytes[..SCALAR_LEN])?,
            a: G1Elem::from_bytes(&bytes[SCALAR_LEN..SCALAR_LEN + G1_LEN])?,
            b: G2Elem::from_bytes(&bytes[SCALAR_LEN + G1_LEN..])?,
        })
    }
}

/// Ordered `(x, B)` pairs; order is part of the wire format.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevocationList {
    pub entries: Vec<(Scalar, G2Elem)>,
}

impl RevocationList {
    pub fn encoded_len(n_rev: usize) -> usize {
        n_rev * REVOCATION_ENTRY_LEN
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.entries.len() * REVOCATION_ENTRY_LEN);
        for (x, b) in &self.entries {
            out.extend_from_slice(&x.to_bytes());
            out.extend_from_slice(&b.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], n_rev: usize) -> Result<Self, BroadcastError> {
        let expected = Self::encoded_len(n_rev);
        if bytes.len() != expected {
            return Err(BroadcastError::BadListLength {
                expected,
                got: bytes.len(),
            });
        }
        let entries = bytes
            .chunks_exact(REVOCATION_ENTRY_LEN)
            .map(|c| {
                Ok((
                    Scalar::from_bytes(&c[..SCALAR_LEN])?,
                    G2Elem::from_bytes(&c[SCALAR_LEN..])?,
                ))
            })
            .collect::<Result<_, GroupError>>()?;
        Ok(RevocationList { entries })
    }
}

/// `(C1, C2) = (G^{κγ}, H^κ)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BroadcastCiphertext {
    pub c1: G1Elem,
    pub c2: G2Elem,
}

impl BroadcastCiphertext {
    pub fn to_bytes(&self) -> [u8; CIPHERTEXT_LEN] {
        let mut out = [0u8; CIPHERTEXT_LEN];
        out[..G1_LEN].copy_from_slice(&self.c1.to_bytes());
        out[G1_LEN..].copy_from_slice(&self.c2.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BroadcastError> {
        if bytes.len() != CIPHERTEXT_LEN {
            return Err(GroupError::BadLength {
                kind: "broadcast ciphertext",
                expected: CIPHERTEXT_LEN,
                got: bytes.len(),
            }
            .into());
        }
        Ok(BroadcastCiphertext {
            c1: G1Elem::from_bytes(&bytes[..G1_LEN])?,
            c2: G2Elem::from_bytes(&bytes[G1_LEN..])?,
        })
    }
}

fn random_non_identity_g1<R: RngCore + CryptoRng>(rng: &mut R) -> G1Elem {
    loop {
        let p = G1Elem::random(&mut *rng);
        if !p.is_identity() {
            return p;
        }
    }
}

fn random_non_identity_g2<R: RngCore + CryptoRng>(rng: &mut R) -> G2Elem {
    loop {
        let p = G2Elem::random(&mut *rng);
        if !p.is_identity() {
            return p;
        }
    }
}

pub fn setup<R: RngCore + CryptoRng>(rng: &mut R) -> ManagerKey {
    ManagerKey {
        g: random_non_identity_g1(rng),
        h: random_non_identity_g2(rng),
        gamma: Scalar::random_nonzero(rng),
        granted: Vec::new(),
    }
}

/// Issues a member key against the manager's current `(G, H, γ)`.
pub fn grant<R: RngCore + CryptoRng>(mk: &mut ManagerKey, rng: &mut R) -> DecryptionKey {
    loop {
        let x = Scalar::random(&mut *rng);
        if mk.granted.contains(&x) {
            continue;
        }
        let Ok(inv) = (mk.gamma + x).inv() else {
            continue;
        };
        let key = DecryptionKey {
            x,
            a: mk.g.pow(&(x * inv)),
            b: mk.h.pow(&inv),
        };
        mk.granted.push(x);
        return key;
    }
}

/// Revokes `to_revoke` (in order) and pads with fresh random `x` up to
/// `n_rev` entries. Every entry, real or padding, advances `H`.
///
/// The manager key is only modified if the whole list could be built.
pub fn revoke<R: RngCore + CryptoRng>(
    mk: &mut ManagerKey,
    to_revoke: &[Scalar],
    n_rev: usize,
    rng: &mut R,
) -> Result<RevocationList, BroadcastError> {
    if to_revoke.len() > n_rev {
        return Err(BroadcastError::TooManyRevocations {
            requested: to_revoke.len(),
            limit: n_rev,
        });
    }
    if to_revoke.iter().any(|x| !mk.granted.contains(x)) {
        return Err(BroadcastError::NotGranted);
    }

    let padding = (to_revoke.len()..n_rev).map(|_| Scalar::random(&mut *rng));
    let xs: Vec<Scalar> = to_revoke.iter().copied().chain(padding).collect();

    let mut h = mk.h;
    let mut entries = Vec::with_capacity(n_rev);
    for x in xs {
        let inv = (mk.gamma + x)
            .inv()
            .map_err(|_| BroadcastError::DivisionByZero)?;
        let b = h.pow(&inv);
        entries.push((x, b));
        h = b;
    }

    mk.h = h;
    mk.granted.retain(|x| !to_revoke.contains(x));
    Ok(RevocationList { entries })
}

/// Fresh `κ` per call; returns the ciphertext and `K = e(G, H)^κ`.
pub fn encrypt_epoch_keys<R: RngCore + CryptoRng>(
    mk: &ManagerKey,
    rng: &mut R,
) -> (BroadcastCiphertext, GtElem) {
    let kappa = Scalar::random_nonzero(rng);
    let g_kappa = mk.g.pow(&kappa);
    let ct = BroadcastCiphertext {
        c1: g_kappa.pow(&mk.gamma),
        c2: mk.h.pow(&kappa),
    };
    // e(G^κ, H) = e(G, H)^κ
    let k = crate::group::pair(&g_kappa, &mk.h);
    (ct, k)
}

/// Applies a revocation list in emission order:
/// `B := (B_r / B)^{1/(x - x_r)}` for each entry `(x_r, B_r)`.
pub fn update_key(
    dk: &DecryptionKey,
    rl: &RevocationList,
) -> Result<DecryptionKey, BroadcastError> {
    let mut b = dk.b;
    for (x, br) in &rl.entries {
        let inv = (dk.x - *x).inv().map_err(|_| BroadcastError::SelfRevoked)?;
        b = br.op(&b.inverse()).pow(&inv);
    }
    Ok(DecryptionKey { b, ..*dk })
}

/// `e(C1, B) · e(A, C2)`. A stale or revoked key yields a wrong value rather
/// than an error.
pub fn decrypt(dk: &DecryptionKey, ct: &BroadcastCiphertext) -> GtElem {
    pair_product(&[(ct.c1, dk.b), (dk.a, ct.c2)])
}

//! Symmetric and signature primitives.
//!
//! PRF and the hashes `H1`..`H3` are SHA-256 with distinct domain tags; the
//! AEAD is AES-256-GCM with the epoch index as nonce; long-term signatures are
//! Ed25519.

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes256Gcm, KeyInit, Nonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::group::{G1Elem, GtElem};

pub const KEY_LEN: usize = 32;
pub const ID_LEN: usize = 32;
pub const LT_PK_LEN: usize = 32;
pub const LT_SIG_LEN: usize = 64;
pub const AEAD_TAG_LEN: usize = 16;

const PRF_TAG: &[u8] = b"MP3-PRF";
const H1_TAG: &[u8] = b"MP3-H1";
const H2_TAG: &[u8] = b"MP3-H2";
const H3_TAG: &[u8] = b"MP3-H3";
const KEK_TAG: &[u8] = b"MP3-KEK";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrimitiveError {
    #[error("AEAD authentication failed")]
    AuthFailure,
    #[error("malformed signing key or signature")]
    Malformed,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct PrfKey(pub [u8; KEY_LEN]);

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct AeadKey(pub [u8; KEY_LEN]);

/// 32-byte keyword under which a record is stored and retrieved.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Identifier(pub [u8; ID_LEN]);

impl Identifier {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut id = [0u8; ID_LEN];
        rng.fill_bytes(&mut id);
        Identifier(id)
    }

    pub fn as_bytes(&self) -> &[u8; ID_LEN] {
        &self.0
    }
}

impl std::fmt::Debug for Identifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Id(")?;
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

fn tagged_sha256(tag: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([tag.len() as u8]);
    h.update(tag);
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// `PRF_K(t)` over the 8-byte big-endian short-term index.
pub fn prf(key: &PrfKey, epoch: u64) -> AeadKey {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&key.0).expect("any key length");
    mac.update(PRF_TAG);
    mac.update(&epoch.to_be_bytes());
    AeadKey(mac.finalize().into_bytes().into())
}

/// `H1: G1 -> {0,1}^256`, used to key the PRF.
pub fn h1(elem: &G1Elem) -> PrfKey {
    PrfKey(tagged_sha256(H1_TAG, &[&elem.to_bytes()]))
}

/// `H2` over a long-term public key.
pub fn h2(pk: &[u8; LT_PK_LEN]) -> Identifier {
    Identifier(tagged_sha256(H2_TAG, &[pk]))
}

/// `H3: GT -> {0,1}^256`.
pub fn h3(elem: &GtElem) -> Identifier {
    Identifier(tagged_sha256(H3_TAG, &[&elem.to_bytes()]))
}

/// Derives the AEAD key for sealed epoch keys from the broadcast key in `GT`.
pub fn kek(elem: &GtElem) -> AeadKey {
    AeadKey(tagged_sha256(KEK_TAG, &[&elem.to_bytes()]))
}

/// 12-byte big-endian encoding of the epoch index.
pub fn epoch_nonce(epoch: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&epoch.to_be_bytes());
    n
}

pub fn aead_seal(key: &AeadKey, epoch: u64, header: &[u8], plaintext: &[u8]) -> Vec<u8> {
    nonce_audit::record(key, epoch);
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("32-byte key");
    cipher
        .encrypt(
            Nonce::from_slice(&epoch_nonce(epoch)),
            Payload {
                msg: plaintext,
                aad: header,
            },
        )
        .expect("in-memory encryption cannot fail")
}

pub fn aead_open(
    key: &AeadKey,
    epoch: u64,
    header: &[u8],
    ciphertext: &[u8],
) -> Result<Vec<u8>, PrimitiveError> {
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("32-byte key");
    cipher
        .decrypt(
            Nonce::from_slice(&epoch_nonce(epoch)),
            Payload {
                msg: ciphertext,
                aad: header,
            },
        )
        .map_err(|_| PrimitiveError::AuthFailure)
}

/// Ed25519 key pair; the public half is `P`, the private half `Y`.
#[derive(Clone)]
pub struct LtSigKeypair {
    signing: SigningKey,
}

impl LtSigKeypair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        LtSigKeypair {
            signing: SigningKey::generate(rng),
        }
    }

    pub fn from_private(private: &[u8; 32]) -> Self {
        LtSigKeypair {
            signing: SigningKey::from_bytes(private),
        }
    }

    pub fn public(&self) -> [u8; LT_PK_LEN] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn private(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }
}

impl std::fmt::Debug for LtSigKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = self.public();
        write!(
            f,
            "LtSigKeypair(pub {:02x}{:02x}{:02x}{:02x}..)",
            p[0], p[1], p[2], p[3]
        )
    }
}

pub fn lt_sign(keys: &LtSigKeypair, message: &[u8]) -> [u8; LT_SIG_LEN] {
    keys.signing.sign(message).to_bytes()
}

/// False on any malformed key/signature as well as on a bad signature.
pub fn lt_verify(pk: &[u8; LT_PK_LEN], message: &[u8], sig: &[u8]) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(pk) else {
        return false;
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(sig) else {
        return false;
    };
    vk.verify(message, &sig).is_ok()
}

/// Per-thread log of every `(key, nonce)` pair passed to [`aead_seal`], used
/// by tests to check that no pair is ever sealed twice.
pub mod nonce_audit {
    use super::AeadKey;
    use std::cell::RefCell;

    thread_local! {
        static LOG: RefCell<Option<Vec<(AeadKey, u64)>>> = const { RefCell::new(None) };
    }

    pub fn begin() {
        LOG.with(|l| *l.borrow_mut() = Some(Vec::new()));
    }

    pub fn finish() -> Vec<(AeadKey, u64)> {
        LOG.with(|l| l.borrow_mut().take().unwrap_or_default())
    }

    pub(crate) fn record(key: &AeadKey, nonce: u64) {
        LOG.with(|l| {
            if let Some(log) = l.borrow_mut().as_mut() {
                log.push((*key, nonce));
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::Scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn prf_determinism_and_separation() {
        let k = PrfKey([1; 32]);
        let k2 = PrfKey([2; 32]);
        assert_eq!(prf(&k, 5), prf(&k, 5));
        assert_ne!(prf(&k, 5), prf(&k, 6));
        assert_ne!(prf(&k, 5), prf(&k2, 5));
    }

    #[test]
    fn hashes_are_stable_and_domain_separated() {
        let pk = [9u8; 32];
        assert_eq!(h2(&pk), h2(&pk));
        assert_eq!(h2(&pk).0.len(), 32);
        let g = G1Elem::generator();
        // h1 and h2 over the same bytes must not collide thanks to the tags.
        assert_ne!(h1(&g).0, tagged_sha256(H2_TAG, &[&g.to_bytes()]));
        let a = GtElem::generator();
        let b = a.pow(&Scalar::from_u64(2));
        assert_eq!(h3(&a), h3(&a));
        assert_ne!(h3(&a), h3(&b));
        assert_eq!(h1(&g).0.len(), KEY_LEN);
    }

    #[test]
    fn aead_round_trip_and_failures() {
        let key = AeadKey([3; 32]);
        let ct = aead_seal(&key, 11, b"", b"hello");
        assert_eq!(ct.len(), 5 + AEAD_TAG_LEN);
        assert_eq!(aead_open(&key, 11, b"", &ct).unwrap(), b"hello");

        let ct = aead_seal(&key, 11, b"header", b"hello");
        assert_eq!(
            aead_open(&key, 11, b"headeR", &ct),
            Err(PrimitiveError::AuthFailure)
        );
        assert_eq!(
            aead_open(&AeadKey([4; 32]), 11, b"header", &ct),
            Err(PrimitiveError::AuthFailure)
        );
        assert_eq!(
            aead_open(&key, 12, b"header", &ct),
            Err(PrimitiveError::AuthFailure)
        );
        let mut flipped = ct.clone();
        flipped[0] ^= 1;
        assert_eq!(
            aead_open(&key, 11, b"header", &flipped),
            Err(PrimitiveError::AuthFailure)
        );
    }

    #[test]
    fn nonce_is_big_endian_epoch() {
        assert_eq!(epoch_nonce(0x0102), [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2]);
    }

    #[test]
    fn signatures() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let kp = LtSigKeypair::generate(&mut rng);
        let other = LtSigKeypair::generate(&mut rng);
        let sig = lt_sign(&kp, b"record");
        assert!(lt_verify(&kp.public(), b"record", &sig));
        assert!(!lt_verify(&other.public(), b"record", &sig));
        assert!(!lt_verify(&kp.public(), b"recorD", &sig));
        assert!(!lt_verify(&kp.public(), b"record", &sig[..63]));
        let restored = LtSigKeypair::from_private(&kp.private());
        assert_eq!(restored.public(), kp.public());
    }

    #[test]
    fn nonce_audit_records_seals() {
        nonce_audit::begin();
        let key = AeadKey([5; 32]);
        aead_seal(&key, 1, b"", b"a");
        aead_seal(&key, 2, b"", b"b");
        let log = nonce_audit::finish();
        assert_eq!(log, vec![(key, 1), (key, 2)]);
        assert!(nonce_audit::finish().is_empty());
    }
}

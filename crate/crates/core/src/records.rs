//! Presence record formats for both tiers and the identifiers they are
//! stored under.
//!
//! Long-term record (uploaded during `T_{j-1}` for `T_j`):
//!
//! ```text
//! prev_pk(32) | rl(N_rev * 128) | C1(48) | C2(96) | sealed(32 + 48 + 16) | sig(64)
//! ```
//!
//! The registration server keeps everything after `prev_pk` as the stored
//! value; followers already know `prev_pk` and re-attach it to check `sig`.
//!
//! Short-term record (uploaded during `t_{i-1}` for `t_i`):
//!
//! ```text
//! ct(2 + 256 + 16) | tag(96)
//! ```
//!
//! Only `ct` is stored; `tag` is consumed by the server to derive the id.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::broadcast::{
    self, BroadcastCiphertext, BroadcastError, DecryptionKey, ManagerKey, RevocationList,
    CIPHERTEXT_LEN,
};
use crate::group::{hash_to_g2, pair, G1Elem, G2Elem, Scalar, G1_LEN, G2_LEN};
use crate::primitives::{
    aead_open, aead_seal, h1, h2, h3, kek, lt_sign, lt_verify, prf, Identifier, LtSigKeypair,
    PrimitiveError, AEAD_TAG_LEN, LT_PK_LEN, LT_SIG_LEN,
};

/// Presence messages are padded to exactly this many bytes.
pub const PRESENCE_MSG_MAX: usize = 256;
pub const ST_CT_LEN: usize = 2 + PRESENCE_MSG_MAX + AEAD_TAG_LEN;
pub const ST_RECORD_LEN: usize = ST_CT_LEN + G2_LEN;
pub const SEALED_LEN: usize = LT_PK_LEN + G1_LEN + AEAD_TAG_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("signature does not verify under the previous long-term key")]
    BadSignature,
    #[error("presence message of {len} bytes exceeds {max}")]
    MessageTooLong { len: usize, max: usize },
    #[error("this follower was revoked")]
    SelfRevoked,
    #[error("sealed payload failed authentication")]
    AuthFailure,
    #[error(transparent)]
    Broadcast(BroadcastError),
}

impl From<BroadcastError> for RecordError {
    fn from(e: BroadcastError) -> Self {
        match e {
            BroadcastError::SelfRevoked => RecordError::SelfRevoked,
            other => RecordError::Broadcast(other),
        }
    }
}

impl From<PrimitiveError> for RecordError {
    fn from(_: PrimitiveError) -> Self {
        RecordError::AuthFailure
    }
}

pub fn epoch_bytes(index: u64) -> [u8; 8] {
    index.to_be_bytes()
}

/// Keys a client publishes for one long-term epoch: `(P, Y)` and `(p, y)`.
#[derive(Clone, Debug)]
pub struct ClientEpochKeys {
    pub lt: LtSigKeypair,
    pub presence_priv: Scalar,
    pub presence_pub: G1Elem,
}

impl ClientEpochKeys {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let lt = LtSigKeypair::generate(rng);
        let y = Scalar::random_nonzero(rng);
        Self::from_parts(lt, y)
    }

    pub fn from_parts(lt: LtSigKeypair, presence_priv: Scalar) -> Self {
        ClientEpochKeys {
            presence_pub: G1Elem::generator().pow(&presence_priv),
            lt,
            presence_priv,
        }
    }

    pub fn lt_public(&self) -> [u8; LT_PK_LEN] {
        self.lt.public()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LongTermRecord {
    pub prev_pk: [u8; LT_PK_LEN],
    pub rl: RevocationList,
    pub ct: BroadcastCiphertext,
    pub sealed: Vec<u8>,
    pub sig: [u8; LT_SIG_LEN],
}

impl LongTermRecord {
    pub fn encoded_len(n_rev: usize) -> usize {
        LT_PK_LEN + Self::stored_len(n_rev)
    }

    /// Length of the value kept in the long-term database.
    pub fn stored_len(n_rev: usize) -> usize {
        RevocationList::encoded_len(n_rev) + CIPHERTEXT_LEN + SEALED_LEN + LT_SIG_LEN
    }

    /// `prev_pk | rl | C1 | C2`: the AEAD header and the signed prefix.
    pub fn header(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            LT_PK_LEN + RevocationList::encoded_len(self.rl.entries.len()) + CIPHERTEXT_LEN,
        );
        out.extend_from_slice(&self.prev_pk);
        out.extend_from_slice(&self.rl.to_bytes());
        out.extend_from_slice(&self.ct.to_bytes());
        out
    }

    fn signed_message(&self) -> Vec<u8> {
        let mut m = self.header();
        m.extend_from_slice(&self.sealed);
        m
    }

    pub fn verify(&self) -> bool {
        lt_verify(&self.prev_pk, &self.signed_message(), &self.sig)
    }

    pub fn id(&self) -> Identifier {
        lt_record_id(&self.prev_pk)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.signed_message();
        out.extend_from_slice(&self.sig);
        out
    }

    pub fn stored_value(&self) -> Vec<u8> {
        self.to_bytes()[LT_PK_LEN..].to_vec()
    }

    pub fn from_bytes(bytes: &[u8], n_rev: usize) -> Result<Self, RecordError> {
        let expected = Self::encoded_len(n_rev);
        if bytes.len() != expected {
            return Err(RecordError::Malformed(format!(
                "long-term record is {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let prev_pk: [u8; LT_PK_LEN] = bytes[..LT_PK_LEN].try_into().expect("length checked");
        Self::from_stored(&prev_pk, &bytes[LT_PK_LEN..], n_rev)
    }

    /// Rebuilds a record from a database value and the key it was found under.
    pub fn from_stored(
        prev_pk: &[u8; LT_PK_LEN],
        value: &[u8],
        n_rev: usize,
    ) -> Result<Self, RecordError> {
        let expected = Self::stored_len(n_rev);
        if value.len() != expected {
            return Err(RecordError::Malformed(format!(
                "long-term value is {} bytes, expected {expected}",
                value.len()
            )));
        }
        let rl_len = RevocationList::encoded_len(n_rev);
        let (rl, rest) = value.split_at(rl_len);
        let (ct, rest) = rest.split_at(CIPHERTEXT_LEN);
        let (sealed, sig) = rest.split_at(SEALED_LEN);
        Ok(LongTermRecord {
            prev_pk: *prev_pk,
            rl: RevocationList::from_bytes(rl, n_rev)?,
            ct: BroadcastCiphertext::from_bytes(ct)?,
            sealed: sealed.to_vec(),
            sig: sig.try_into().expect("length checked"),
        })
    }
}

/// `ID = H2(P^{j-1})`.
pub fn lt_record_id(prev_pk: &[u8; LT_PK_LEN]) -> Identifier {
    h2(prev_pk)
}

/// Builds the record for long-term epoch `j`, revoking `revocations` and
/// padding to `n_rev`. `mk` is advanced past the emitted revocation list.
pub fn make_lt_record<R: RngCore + CryptoRng>(
    prev: &ClientEpochKeys,
    next: &ClientEpochKeys,
    mk: &mut ManagerKey,
    revocations: &[Scalar],
    n_rev: usize,
    j: u64,
    rng: &mut R,
) -> Result<LongTermRecord, RecordError> {
    let rl = broadcast::revoke(mk, revocations, n_rev, rng)?;
    let (ct, k) = broadcast::encrypt_epoch_keys(mk, rng);
    let mut record = LongTermRecord {
        prev_pk: prev.lt_public(),
        rl,
        ct,
        sealed: Vec::new(),
        sig: [0u8; LT_SIG_LEN],
    };
    let mut plaintext = Vec::with_capacity(LT_PK_LEN + G1_LEN);
    plaintext.extend_from_slice(&next.lt_public());
    plaintext.extend_from_slice(&next.presence_pub.to_bytes());
    record.sealed = aead_seal(&kek(&k), j, &record.header(), &plaintext);
    record.sig = lt_sign(&prev.lt, &record.signed_message());
    Ok(record)
}

/// What a follower learns from a publisher's long-term record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpenedEpochKeys {
    pub updated_key: DecryptionKey,
    pub lt_pk: [u8; LT_PK_LEN],
    pub presence_pub: G1Elem,
}

/// Verifies, applies the revocation list to `dk`, recovers `K` and opens the
/// sealed epoch keys. `dk` itself is left untouched.
pub fn open_lt_record(
    record: &LongTermRecord,
    dk: &DecryptionKey,
    j: u64,
) -> Result<OpenedEpochKeys, RecordError> {
    if !record.verify() {
        return Err(RecordError::BadSignature);
    }
    let updated_key = broadcast::update_key(dk, &record.rl)?;
    let k = broadcast::decrypt(&updated_key, &record.ct);
    let plain = aead_open(&kek(&k), j, &record.header(), &record.sealed)?;
    if plain.len() != LT_PK_LEN + G1_LEN {
        return Err(RecordError::Malformed(
            "sealed epoch keys have wrong length".into(),
        ));
    }
    Ok(OpenedEpochKeys {
        updated_key,
        lt_pk: plain[..LT_PK_LEN].try_into().expect("length checked"),
        presence_pub: G1Elem::from_bytes(&plain[LT_PK_LEN..])
            .map_err(|e| RecordError::Malformed(e.to_string()))?,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShortTermRecord {
    pub ct: Vec<u8>,
    pub tag: G2Elem,
}

impl ShortTermRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ST_RECORD_LEN);
        out.extend_from_slice(&self.ct);
        out.extend_from_slice(&self.tag.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RecordError> {
        if bytes.len() != ST_RECORD_LEN {
            return Err(RecordError::Malformed(format!(
                "short-term record is {} bytes, expected {ST_RECORD_LEN}",
                bytes.len()
            )));
        }
        Ok(ShortTermRecord {
            ct: bytes[..ST_CT_LEN].to_vec(),
            tag: G2Elem::from_bytes(&bytes[ST_CT_LEN..])
                .map_err(|e| RecordError::Malformed(e.to_string()))?,
        })
    }

    pub fn id(&self) -> Identifier {
        st_record_id_from_tag(&self.tag)
    }
}

fn pad_message(message: &[u8]) -> Result<Vec<u8>, RecordError> {
    if message.len() > PRESENCE_MSG_MAX {
        return Err(RecordError::MessageTooLong {
            len: message.len(),
            max: PRESENCE_MSG_MAX,
        });
    }
    let mut padded = Vec::with_capacity(2 + PRESENCE_MSG_MAX);
    padded.extend_from_slice(&(message.len() as u16).to_be_bytes());
    padded.extend_from_slice(message);
    padded.resize(2 + PRESENCE_MSG_MAX, 0);
    Ok(padded)
}

fn unpad_message(padded: &[u8]) -> Result<Vec<u8>, RecordError> {
    if padded.len() != 2 + PRESENCE_MSG_MAX {
        return Err(RecordError::Malformed(
            "padded message has wrong length".into(),
        ));
    }
    let len = u16::from_be_bytes([padded[0], padded[1]]) as usize;
    if len > PRESENCE_MSG_MAX {
        return Err(RecordError::Malformed(
            "message length prefix out of range".into(),
        ));
    }
    Ok(padded[2..2 + len].to_vec())
}

/// Presence record for short-term epoch `i` under the keys of its containing
/// long-term epoch.
pub fn make_st_record(
    keys: &ClientEpochKeys,
    i: u64,
    message: &[u8],
) -> Result<ShortTermRecord, RecordError> {
    let padded = pad_message(message)?;
    let k = prf(&h1(&keys.presence_pub), i);
    let ct = aead_seal(&k, i, b"", &padded);
    let tag = hash_to_g2(&epoch_bytes(i)).pow(&keys.presence_priv);
    Ok(ShortTermRecord { ct, tag })
}

/// Server-side id: `H3(e(g1, s))`.
pub fn st_record_id_from_tag(tag: &G2Elem) -> Identifier {
    h3(&pair(&G1Elem::generator(), tag))
}

/// Follower-side id: `H3(e(p, H0(i)))`.
pub fn st_record_id_from_pub(presence_pub: &G1Elem, i: u64) -> Identifier {
    h3(&pair(presence_pub, &hash_to_g2(&epoch_bytes(i))))
}

/// Decrypts a stored short-term ciphertext back to the presence message.
pub fn open_st_ct(presence_pub: &G1Elem, i: u64, ct: &[u8]) -> Result<Vec<u8>, RecordError> {
    let k = prf(&h1(presence_pub), i);
    let padded = aead_open(&k, i, b"", ct)?;
    unpad_message(&padded)
}

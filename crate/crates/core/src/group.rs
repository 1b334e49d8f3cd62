//! Type-3 bilinear group over BLS12-381.
//!
//! All protocol arithmetic goes through the newtypes in this module so the
//! curve choice is pinned in one place ([`SUITE`]). `GT` is written
//! multiplicatively here even though the backing crate models it additively.
//! There is deliberately no conversion between `G1` and `G2`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use blstrs::{Bls12, Compress, G1Affine, G1Projective, G2Affine, G2Prepared, G2Projective, Gt};
use ff::Field;
use group::{Curve, Group};
use pairing::{MillerLoopResult, MultiMillerLoop};
use rand::{CryptoRng, RngCore};
use thiserror::Error;

pub const SCALAR_LEN: usize = 32;
pub const G1_LEN: usize = 48;
pub const G2_LEN: usize = 96;
pub const GT_LEN: usize = 288;

/// Domain-separation tag for hashing epoch indices into `G2`.
pub const H0_DST: &[u8] = b"MP3-H0";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GroupError {
    #[error("division by zero in Z_p")]
    DivisionByZero,
    #[error("invalid {kind} encoding")]
    InvalidEncoding { kind: &'static str },
    #[error("expected {expected} bytes for {kind}, got {got}")]
    BadLength {
        kind: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Pins the abstract groups to one concrete instantiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteDescriptor {
    pub curve_id: &'static str,
    /// Group order, big-endian hex.
    pub modulus_hex: &'static str,
    pub scalar_encoding: &'static str,
    pub len_scalar: usize,
    pub len_g1: usize,
    pub len_g2: usize,
    pub len_gt: usize,
    pub h0_dst: &'static [u8],
}

pub const SUITE: SuiteDescriptor = SuiteDescriptor {
    curve_id: "BLS12-381",
    modulus_hex: "73eda753299d7d483339d80809a1d80553bda402fffe5bfeffffffff00000001",
    scalar_encoding: "big-endian",
    len_scalar: SCALAR_LEN,
    len_g1: G1_LEN,
    len_g2: G2_LEN,
    len_gt: GT_LEN,
    h0_dst: H0_DST,
};

fn fixed<const N: usize>(kind: &'static str, bytes: &[u8]) -> Result<[u8; N], GroupError> {
    bytes.try_into().map_err(|_| GroupError::BadLength {
        kind,
        expected: N,
        got: bytes.len(),
    })
}

/// Element of `Z_p`, `p` the prime group order.
#[derive(Clone, Copy, PartialEq, Eq, Default)]
pub struct Scalar(pub(crate) blstrs::Scalar);

impl Scalar {
    pub const ZERO: Scalar = Scalar(blstrs::Scalar::ZERO);
    pub const ONE: Scalar = Scalar(blstrs::Scalar::ONE);

    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Scalar(blstrs::Scalar::random(rng))
    }

    /// Uniform over `[1, p-1]`.
    pub fn random_nonzero<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        loop {
            let s = Self::random(&mut *rng);
            if !s.is_zero() {
                return s;
            }
        }
    }

    pub fn from_u64(v: u64) -> Self {
        Scalar(blstrs::Scalar::from(v))
    }

    pub fn is_zero(&self) -> bool {
        bool::from(self.0.is_zero())
    }

    pub fn inv(&self) -> Result<Scalar, GroupError> {
        Option::from(self.0.invert())
            .map(Scalar)
            .ok_or(GroupError::DivisionByZero)
    }

    pub fn to_bytes(&self) -> [u8; SCALAR_LEN] {
        self.0.to_bytes_be()
    }

    /// Rejects encodings `>= p`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
        let arr = fixed::<SCALAR_LEN>("scalar", bytes)?;
        Option::from(blstrs::Scalar::from_bytes_be(&arr))
            .map(Scalar)
            .ok_or(GroupError::InvalidEncoding { kind: "scalar" })
    }
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Scalar(")?;
        for b in &self.to_bytes()[..4] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

impl Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 + rhs.0)
    }
}

impl Sub for Scalar {
    type Output = Scalar;
    fn sub(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 - rhs.0)
    }
}

impl Mul for Scalar {
    type Output = Scalar;
    fn mul(self, rhs: Scalar) -> Scalar {
        Scalar(self.0 * rhs.0)
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar(-self.0)
    }
}

macro_rules! curve_elem {
    ($name:ident, $proj:ty, $affine:ty, $len:expr, $kind:literal) => {
        #[derive(Clone, Copy, PartialEq, Eq)]
        pub struct $name(pub(crate) $affine);

        impl $name {
            pub fn generator() -> Self {
                $name(<$affine>::from(<$proj>::generator()))
            }

            pub fn identity() -> Self {
                $name(<$affine>::from(<$proj>::identity()))
            }

            pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
                $name(<$proj>::random(rng).to_affine())
            }

            pub fn is_identity(&self) -> bool {
                bool::from(<$proj>::from(self.0).is_identity())
            }

            /// Exponentiation by a scalar (`self^k` in multiplicative notation).
            pub fn pow(&self, k: &Scalar) -> Self {
                $name((<$proj>::from(self.0) * k.0).to_affine())
            }

            /// Group operation (`self · rhs`).
            pub fn op(&self, rhs: &Self) -> Self {
                $name((<$proj>::from(self.0) + rhs.0).to_affine())
            }

            /// Group inverse (`self^-1`).
            pub fn inverse(&self) -> Self {
                $name(-self.0)
            }

            pub fn to_bytes(&self) -> [u8; $len] {
                self.0.to_compressed()
            }

            /// Accepts only canonical compressed encodings of points in the
            /// prime-order subgroup.
            pub fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
                let arr = fixed::<$len>($kind, bytes)?;
                let p: Option<$affine> = Option::from(<$affine>::from_compressed(&arr));
                match p {
                    Some(p) if p.to_compressed() == arr => Ok($name(p)),
                    _ => Err(GroupError::InvalidEncoding { kind: $kind }),
                }
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let b = self.to_bytes();
                write!(
                    f,
                    "{}({:02x}{:02x}{:02x}{:02x}..)",
                    $kind, b[0], b[1], b[2], b[3]
                )
            }
        }
    };
}

curve_elem!(G1Elem, G1Projective, G1Affine, G1_LEN, "G1");
curve_elem!(G2Elem, G2Projective, G2Affine, G2_LEN, "G2");

/// Element of the target group, written multiplicatively.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct GtElem(pub(crate) Gt);

impl GtElem {
    pub fn identity() -> Self {
        GtElem(Gt::identity())
    }

    /// `e(g1, g2)`.
    pub fn generator() -> Self {
        GtElem(Gt::generator())
    }

    pub fn is_identity(&self) -> bool {
        bool::from(self.0.is_identity())
    }

    pub fn pow(&self, k: &Scalar) -> Self {
        GtElem(self.0 * k.0)
    }

    pub fn op(&self, rhs: &Self) -> Self {
        GtElem(self.0 + rhs.0)
    }

    /// Torus-compressed form. The identity has no torus representation and is
    /// encoded as all zeroes, which never decodes to a subgroup element
    /// otherwise (it would denote `-1`).
    pub fn to_bytes(&self) -> [u8; GT_LEN] {
        let mut out = [0u8; GT_LEN];
        if !self.is_identity() {
            let mut v = Vec::with_capacity(GT_LEN);
            self.0
                .write_compressed(&mut v)
                .expect("subgroup element compresses");
            out.copy_from_slice(&v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GroupError> {
        let arr = fixed::<GT_LEN>("GT", bytes)?;
        if arr.iter().all(|&b| b == 0) {
            return Ok(Self::identity());
        }
        let gt = Gt::read_compressed(&arr[..])
            .map_err(|_| GroupError::InvalidEncoding { kind: "GT" })?;
        let elem = GtElem(gt);
        if elem.to_bytes() != arr {
            return Err(GroupError::InvalidEncoding { kind: "GT" });
        }
        Ok(elem)
    }
}

impl fmt::Debug for GtElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.to_bytes();
        write!(f, "GT({:02x}{:02x}{:02x}{:02x}..)", b[0], b[1], b[2], b[3])
    }
}

/// The bilinear map `e: G1 x G2 -> GT`.
pub fn pair(a: &G1Elem, b: &G2Elem) -> GtElem {
    GtElem(blstrs::pairing(&a.0, &b.0))
}

/// `∏ e(a_i, b_i)` with a single final exponentiation.
pub fn pair_product(terms: &[(G1Elem, G2Elem)]) -> GtElem {
    let prepared: Vec<(G1Affine, G2Prepared)> = terms
        .iter()
        .map(|(a, b)| (a.0, G2Prepared::from(b.0)))
        .collect();
    let refs: Vec<(&G1Affine, &G2Prepared)> = prepared.iter().map(|(a, b)| (a, b)).collect();
    GtElem(Bls12::multi_miller_loop(&refs).final_exponentiation())
}

/// Hash-to-curve into `G2` (SSWU, random-oracle variant) under [`H0_DST`].
pub fn hash_to_g2(input: &[u8]) -> G2Elem {
    G2Elem(G2Projective::hash_to_curve(input, H0_DST, &[]).to_affine())
}

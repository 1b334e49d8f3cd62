//! GF(2^8) with the AES reduction polynomial `x^8 + x^4 + x^3 + x + 1`.
//!
//! Addition is XOR. Multiplication goes through a full 256x256 product table
//! built once from log/antilog tables over the generator `0x03`.

use std::sync::OnceLock;

const POLY: u16 = 0x11b;

struct Tables {
    exp: [u8; 512],
    log: [u8; 256],
    mul: Box<[[u8; 256]; 256]>,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut exp = [0u8; 512];
        let mut log = [0u8; 256];
        let mut x: u16 = 1;
        for (i, e) in exp.iter_mut().take(255).enumerate() {
            *e = x as u8;
            log[x as usize] = i as u8;
            // x *= 3
            x ^= x << 1;
            if x & 0x100 != 0 {
                x ^= POLY;
            }
        }
        for i in 255..512 {
            exp[i] = exp[i - 255];
        }
        let mut mul = Box::new([[0u8; 256]; 256]);
        for a in 1..256 {
            for b in 1..256 {
                mul[a][b] = exp[log[a] as usize + log[b] as usize];
            }
        }
        Tables { exp, log, mul }
    })
}

#[inline]
pub fn add(a: u8, b: u8) -> u8 {
    a ^ b
}

#[inline]
pub fn mul(a: u8, b: u8) -> u8 {
    tables().mul[a as usize][b as usize]
}

/// Row of the product table: `row(s)[b] = s * b`.
#[inline]
pub fn mul_row(s: u8) -> &'static [u8; 256] {
    &tables().mul[s as usize]
}

pub fn inv(a: u8) -> Option<u8> {
    if a == 0 {
        return None;
    }
    let t = tables();
    Some(t.exp[255 - t.log[a as usize] as usize])
}

pub fn div(a: u8, b: u8) -> Option<u8> {
    inv(b).map(|ib| mul(a, ib))
}

/// Horner evaluation of `coeffs[0] + coeffs[1] x + ...`.
pub fn eval_poly(coeffs: &[u8], x: u8) -> u8 {
    coeffs.iter().rev().fold(0u8, |acc, &c| add(mul(acc, x), c))
}

/// Lagrange basis coefficients for interpolating at `z` from points `xs`.
/// Panics on repeated points; callers check distinctness.
pub fn lagrange_at(xs: &[u8], z: u8) -> Vec<u8> {
    xs.iter()
        .enumerate()
        .map(|(i, &xi)| {
            xs.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(1u8, |acc, (_, &xj)| {
                    let num = add(z, xj);
                    let den = add(xi, xj);
                    mul(acc, div(num, den).expect("distinct evaluation points"))
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Shift-and-add reference multiply.
    fn slow_mul(mut a: u8, mut b: u8) -> u8 {
        let mut p = 0u8;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let hi = a & 0x80;
            a <<= 1;
            if hi != 0 {
                a ^= 0x1b;
            }
            b >>= 1;
        }
        p
    }

    #[test]
    fn table_matches_reference_multiply() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!(mul(a, b), slow_mul(a, b), "{a} * {b}");
            }
        }
    }

    #[test]
    fn known_aes_products() {
        assert_eq!(mul(0x57, 0x83), 0xc1);
        assert_eq!(mul(0x57, 0x13), 0xfe);
    }

    #[test]
    fn inverses() {
        assert_eq!(inv(0), None);
        for a in 1..=255u8 {
            assert_eq!(mul(a, inv(a).unwrap()), 1);
        }
    }

    #[test]
    fn interpolation_recovers_constant_term() {
        let coeffs = [0x42, 0x17, 0xa9];
        let xs = [1u8, 2, 3];
        let ys: Vec<u8> = xs.iter().map(|&x| eval_poly(&coeffs, x)).collect();
        let lam = lagrange_at(&xs, 0);
        let secret = lam
            .iter()
            .zip(&ys)
            .fold(0, |acc, (&l, &y)| add(acc, mul(l, y)));
        assert_eq!(secret, 0x42);
        let lam4 = lagrange_at(&xs, 4);
        let y4 = lam4
            .iter()
            .zip(&ys)
            .fold(0, |acc, (&l, &y)| add(acc, mul(l, y)));
        assert_eq!(y4, eval_poly(&coeffs, 4));
    }
}

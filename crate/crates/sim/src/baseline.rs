//! Analytic size model of a DP5-style long-term database, which stores one
//! record per directed friendship.

use mp3_core::pir::ceil_sqrt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dp5Baseline {
    pub records: u64,
    pub bytes: u64,
}

/// `n_clients * n_fmax` records of `record_len` bytes, laid out in
/// `r = ceil(sqrt(n s))` buckets padded to `ceil(n/r + sqrt(n/r))` entries.
pub fn dp5_baseline(n_clients: usize, n_fmax: usize, record_len: usize) -> Dp5Baseline {
    let n = n_clients as u64 * n_fmax as u64;
    Dp5Baseline {
        records: n,
        bytes: padded_bytes(n, record_len as u64),
    }
}

pub fn padded_bytes(n: u64, s: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    let r = ceil_sqrt(n * s).max(1);
    let mean = n as f64 / r as f64;
    let per_bucket = (mean + mean.sqrt()).ceil() as u64;
    r * per_bucket * s
}

//! Log-log least squares over an N sweep.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use mp3_core::wire::Tier;

use crate::metrics::MetricsRow;

pub const MIN_SWEEP_SIZES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// `<tier>.<column>`, e.g. `long.lookup_server_total_bytes`.
    pub quantity: String,
    pub slope: f64,
    pub r_squared: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {MIN_SWEEP_SIZES} distinct N values, got {0}")]
    TooFewSizes(usize),
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, R²)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    (slope, intercept, r2)
}

type Column = (&'static str, fn(&MetricsRow) -> f64);

const COLUMNS: &[Column] = &[
    ("db_bytes", |r| r.db_bytes as f64),
    ("db_records", |r| r.db_records as f64),
    ("reg_server_in_bytes", |r| r.reg_server_in_bytes as f64),
    ("lookup_server_in_bytes", |r| {
        r.lookup_server_in_bytes as f64
    }),
    ("lookup_server_out_bytes", |r| {
        r.lookup_server_out_bytes as f64
    }),
    ("lookup_server_total_bytes", |r| {
        (r.lookup_server_in_bytes + r.lookup_server_out_bytes) as f64
    }),
    ("client_in_bytes", |r| r.client_in_bytes),
    ("client_out_bytes", |r| r.client_out_bytes),
    ("dp5_baseline_bytes", |r| {
        r.dp5_baseline_bytes.map_or(0.0, |b| b as f64)
    }),
];

/// Slope of `ln(mean quantity)` against `ln N` for every tier and column.
/// Columns that are zero at some N are skipped.
pub fn fit_scaling(rows: &[MetricsRow]) -> Result<Vec<ScalingFit>, FitError> {
    let sizes: BTreeMap<usize, ()> = rows.iter().map(|r| (r.n, ())).collect();
    if sizes.len() < MIN_SWEEP_SIZES {
        return Err(FitError::TooFewSizes(sizes.len()));
    }
    let mut fits = Vec::new();
    for tier in [Tier::Long, Tier::Short] {
        for (name, get) in COLUMNS {
            let mut by_n: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for r in rows.iter().filter(|r| r.epoch_kind == tier) {
                let e = by_n.entry(r.n).or_default();
                e.0 += get(r);
                e.1 += 1;
            }
            if by_n.len() < MIN_SWEEP_SIZES {
                continue;
            }
            let points: Vec<(f64, f64)> = by_n
                .iter()
                .map(|(&n, &(sum, count))| ((n as f64).ln(), sum / count as f64))
                .collect();
            if points.iter().any(|p| p.1 <= 0.0) {
                continue;
            }
            let logged: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x, y.ln())).collect();
            let (slope, _, r_squared) = linear_fit(&logged);
            fits.push(ScalingFit {
                quantity: format!("{tier}.{name}"),
                slope,
                r_squared,
            });
        }
    }
    Ok(fits)
}

pub fn find<'a>(fits: &'a [ScalingFit], quantity: &str) -> Option<&'a ScalingFit> {
    fits.iter().find(|f| f.quantity == quantity)
}

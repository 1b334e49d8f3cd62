use std::io::Write;

use serde::{Deserialize, Serialize};

use mp3_core::wire::Tier;

/// One row per published database. Byte counters are sums of exact frame
/// lengths for frames tagged with that epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Number of simulated clients.
    pub n: usize,
    pub epoch_kind: Tier,
    pub epoch_index: u64,
    pub db_bytes: u64,
    pub db_records: u64,
    pub reg_server_in_bytes: u64,
    /// Summed over lookup servers.
    pub lookup_server_in_bytes: u64,
    pub lookup_server_out_bytes: u64,
    /// Means over all clients.
    pub client_in_bytes: f64,
    pub client_out_bytes: f64,
    /// Long-term rows only.
    pub dp5_baseline_records: Option<u64>,
    pub dp5_baseline_bytes: Option<u64>,
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

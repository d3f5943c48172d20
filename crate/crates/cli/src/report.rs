//! CSV records emitted by `zipcoll collective`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub operation: String,
    pub transport: String,
    pub world_size: usize,
    /// Per-rank input elements.
    pub element_count: usize,
    /// Uncompressed payload bytes sent, summed over ranks.
    pub payload_bytes: u64,
    /// Bytes that went on the wire for those payloads, summed over ranks.
    pub compressed_bytes: u64,
    /// Slowest rank's elapsed time.
    pub seconds: f64,
    pub ratio: f64,
    /// `native` or `zipped`; empty for fixed-path operations.
    pub path: String,
    /// `pass`, `fail`, or empty when not verified.
    pub verified: String,
}

pub fn write_records(records: &[Record], out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => write_to(records, std::fs::File::create(path)?),
        None => write_to(records, std::io::stdout().lock()),
    }
}

fn write_to(records: &[Record], sink: impl Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    if records.is_empty() {
        w.write_record(HEADER)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const HEADER: [&str; 10] = [
    "operation",
    "transport",
    "world_size",
    "element_count",
    "payload_bytes",
    "compressed_bytes",
    "seconds",
    "ratio",
    "path",
    "verified",
];

pub fn read_records(path: &Path) -> anyhow::Result<Vec<Record>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

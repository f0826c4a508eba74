//! Compression-ratio complexity of token sequences.
//!
//! The ratio is the length of a raw DEFLATE stream (no zlib header or
//! trailer) at the maximum compression level divided by the input length.
//! Values slightly above 1 occur for short incompressible inputs and are kept
//! as-is.

use std::collections::BTreeMap;
use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::corpus::{Probe, ProbeId, TokenId, TokenSequence};
use crate::error::{Error, Result};

/// Compressor configuration recorded in run manifests.
pub const COMPRESSOR_ID: &str = "deflate-raw/flate2-miniz_oxide";
pub const COMPRESSION_LEVEL: u32 = 9;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZComplexity(pub f64);

impl ZComplexity {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn compressed_len(bytes: &[u8]) -> usize {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(COMPRESSION_LEVEL));
    enc.write_all(bytes).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail").len()
}

pub fn z_complexity_bytes(bytes: &[u8]) -> Result<ZComplexity> {
    if bytes.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(ZComplexity(compressed_len(bytes) as f64 / bytes.len() as f64))
}

pub fn z_complexity(seq: &[TokenId]) -> Result<ZComplexity> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    z_complexity_bytes(&TokenSequence::from(seq).to_bytes()?)
}

/// Bin index of `value` under half-open intervals `[e_i, e_{i+1})`, clamped
/// to the first and last bin.
pub fn bin_index(value: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    let i = edges.partition_point(|&e| e <= value);
    i.saturating_sub(1).min(bins - 1)
}

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::invalid("need at least two bin edges"));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("bin edges must be strictly increasing"));
    }
    Ok(())
}

/// Bins each probe by the complexity of its target.
pub fn complexity_bins(probes: &[Probe], edges: &[f64]) -> Result<BTreeMap<ProbeId, usize>> {
    check_edges(edges)?;
    probes
        .iter()
        .map(|p| Ok((p.probe_id, bin_index(z_complexity(&p.target)?.0, edges))))
        .collect()
}

/// Edges splitting `values` into `parts` groups of near-equal size; the outer
/// edges are the sample minimum and a value just above the maximum.
pub fn quantile_edges(values: &[f64], parts: usize) -> Result<Vec<f64>> {
    if values.is_empty() || parts == 0 {
        return Err(Error::invalid("quantile edges need values and parts >= 1"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges = vec![sorted[0]];
    for i in 1..parts {
        edges.push(sorted[i * n / parts]);
    }
    let last = sorted[n - 1];
    edges.push(last + last.abs().max(1.0) * 1e-9);
    edges.dedup();
    check_edges(&edges)?;
    Ok(edges)
}

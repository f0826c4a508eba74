//! Parameter snapshots and their binary file format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MAUD" | u32 version | u32 header_len | header JSON
//! u32 tensor_count | per tensor: u16 name_len, name, u8 ndim, u32 dims...
//! f32 data of every tensor in table order
//! ```

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::params::{ParamLayout, Params};
use super::ModelConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MAUD";
pub const FORMAT_VERSION: u32 = 1;

/// Position of the training data RNG when the snapshot was taken.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// ChaCha word position, decimal (exceeds JSON's safe integer range).
    pub word_pos: String,
}

/// Provenance of a perturbed copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTag {
    pub base_step: u64,
    pub seed: u64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRecord {
    /// Number of optimizer updates applied.
    pub step: u64,
    pub config: ModelConfig,
    pub params: Params<f32>,
    pub rng_state: RngState,
    pub perturbation: Option<PerturbationTag>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    config: ModelConfig,
    rng_state: RngState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perturbation: Option<PerturbationTag>,
}

impl CheckpointRecord {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            step: self.step,
            config: self.config.clone(),
            rng_state: self.rng_state.clone(),
            perturbation: self.perturbation.clone(),
        })?;
        let layout = self.params.layout();
        let mut out = Vec::with_capacity(64 + header.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(layout.tensors().len() as u32).to_le_bytes());
        for t in layout.tensors() {
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.shape.len() as u8);
            for &dim in &t.shape {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
        }
        for &v in self.params.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        header.config.validate()?;
        let count = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            shapes.push((name, shape));
        }
        let layout = ParamLayout::from_shapes(shapes)?;
        if layout != ParamLayout::for_config(&header.config) {
            return Err(Error::ShapeMismatch("tensor table does not match the config".into()));
        }
        let raw = r.take(4 * layout.total())?;
        if r.at != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(CheckpointRecord {
            step: header.step,
            config: header.config,
            params: Params::from_data(Arc::new(layout), data)?,
            rng_state: header.rng_state,
            perturbation: header.perturbation,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint file is truncated".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

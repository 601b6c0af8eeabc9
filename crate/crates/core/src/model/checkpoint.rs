//! Binary checkpoint: `COUGHKIT` magic, little-endian u64 header length, a
//! JSON header, then every tensor as little-endian f32 in header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"COUGHKIT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata, typically the model config and training record.
    pub config: serde_json::Value,
    pub params: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the data section.
    offset: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .params
            .iter()
            .map(|(name, t)| {
                let e = Entry { name: name.clone(), shape: t.shape().to_vec(), offset };
                offset += 4 * t.numel();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header { config: self.config.clone(), tensors })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing COUGHKIT magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..data_start]).map_err(|e| bad(&format!("bad header: {e}")))?;
        let data = &bytes[data_start..];
        let mut params = ParamStore::new();
        let mut expected_offset = 0;
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != expected_offset {
                return Err(bad(&format!("tensor {} has non-contiguous offset", e.name)));
            }
            let end = e.offset + 4 * n;
            let raw = data.get(e.offset..end).ok_or_else(|| bad(&format!("tensor {} is truncated", e.name)))?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            if params.contains(&e.name) {
                return Err(bad(&format!("duplicate tensor {}", e.name)));
            }
            params.insert(e.name, Tensor::new(e.shape, values)?);
            expected_offset = end;
        }
        if expected_offset != data.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self { config: header.config, params })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

//! Named-tensor archive.
//!
//! Layout: magic `ARCK`, `u32` version, `u64` header length, a JSON header
//! (`{"tensors": [{name, shape, offset}], "meta": ...}`), then every tensor's
//! values as little-endian `f32` in row-major order. `offset` counts bytes
//! from the start of the data section.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::EngineError;

const MAGIC: &[u8; 4] = b"ARCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    pub meta: serde_json::Value,
}

fn fmt_err(msg: impl Into<String>) -> EngineError {
    EngineError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(store: &ParamStore, meta: &serde_json::Value, mut w: W) -> Result<(), EngineError> {
    let mut offset = 0u64;
    let mut tensors = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        let (r, c) = p.value.dim();
        tensors.push(TensorEntry { name: p.name.clone(), shape: [r, c], offset });
        offset += (r * c * 4) as u64;
    }
    let header = serde_json::to_vec(&Header { tensors, meta: meta.clone() }).map_err(|e| fmt_err(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let mut buf = Vec::new();
    for (_, p) in store.iter() {
        buf.clear();
        buf.reserve(p.value.len() * 4);
        for &x in p.value.iter() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, EngineError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)?;
    let hlen = u64::from_le_bytes(u64b) as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes)?;
    let header: Header = serde_json::from_slice(&hbytes).map_err(|e| fmt_err(e.to_string()))?;
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n = t.shape[0] * t.shape[1];
        let start = t.offset as usize;
        let end = start + n * 4;
        let bytes = data.get(start..end).ok_or_else(|| fmt_err(format!("tensor {} truncated", t.name)))?;
        let vals: Vec<f64> =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let value = Array2::from_shape_vec((t.shape[0], t.shape[1]), vals).map_err(|e| fmt_err(e.to_string()))?;
        tensors.push(NamedTensor { name: t.name, value });
    }
    Ok(Checkpoint { tensors, meta: header.meta })
}

impl ParamStore {
    /// Overwrites parameter values by name. Every stored parameter must be
    /// present in `tensors` with a matching shape.
    pub fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<(), EngineError> {
        let ids: Vec<_> = self.iter().map(|(id, _)| id).collect();
        for id in ids {
            let name = self.get(id).name.clone();
            let t = tensors.iter().find(|t| t.name == name).ok_or_else(|| fmt_err(format!("missing tensor {name}")))?;
            let p = self.get_mut(id);
            if p.value.dim() != t.value.dim() {
                return Err(EngineError::ShapeMismatch {
                    op: "load_tensors",
                    lhs: vec![p.value.nrows(), p.value.ncols()],
                    rhs: vec![t.value.nrows(), t.value.ncols()],
                });
            }
            p.value.assign(&t.value);
        }
        Ok(())
    }
}

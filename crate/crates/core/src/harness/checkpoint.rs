//! Binary checkpoint format (`*.lrfpn`), all integers little-endian:
//!
//! ```text
//! magic   "LRFPN1\n"
//! u32     param count
//! per param:
//!   u32   name length, then UTF-8 name
//!   u8    dtype (0 = f64, 1 = f32)
//!   u8    rank (1..=4)
//!   u32   × rank dims
//!   raw row-major data in dtype
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::param::{padded_dims, ParamStore};
use crate::tensor::{DType, Tensor};

pub const MAGIC: &[u8; 7] = b"LRFPN1\n";
pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode(store: &ParamStore, dtype: DType) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(dtype.tag());
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match dtype {
            DType::F64 => p.value.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            DType::F32 => p.value.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<CheckpointEntry>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic").map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let count = r.u32("param count")? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Corrupt("param name is not UTF-8".into()))?
            .to_string();
        let tag = r.u8("dtype")?;
        let dtype = DType::from_tag(tag).ok_or(Error::UnknownDType(tag))?;
        let rank = r.u8("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::CheckpointParam { name, reason: format!("rank {rank} not in 1..={MAX_RANK}") });
        }
        let shape = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::CheckpointParam { name: name.clone(), reason: format!("invalid dims {shape:?}") })?;
        let nbytes = numel.checked_mul(dtype.size()).ok_or(Error::Truncated("data"))?;
        let raw = r.take(nbytes, "data")?;
        let data = match dtype {
            DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect(),
        };
        entries.push(CheckpointEntry { name, dtype, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes after last param", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path, dtype: DType) -> Result<()> {
    std::fs::write(path, encode(store, dtype)).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    decode(&bytes)
}

/// Overwrite every param of `store` from `entries`. Names must match one to
/// one and shapes exactly; gradients and momentum are reset.
pub fn apply_checkpoint(store: &mut ParamStore, entries: &[CheckpointEntry]) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::Corrupt(format!(
            "checkpoint has {} params, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for e in entries {
        let id = store.id(&e.name).ok_or_else(|| Error::CheckpointParam {
            name: e.name.clone(),
            reason: "not present in model".into(),
        })?;
        let p = store.get_mut(id);
        if p.shape != e.shape {
            return Err(Error::CheckpointParam {
                name: e.name.clone(),
                reason: format!("shape {:?} does not match model shape {:?}", e.shape, p.shape),
            });
        }
        p.value = Tensor::from_vec(padded_dims(&e.shape), e.data.clone())?;
        p.grad.fill(0.0);
        p.momentum.fill(0.0);
    }
    Ok(())
}

//! Parameter checkpoints.
//!
//! Little-endian layout: a u32 entry count, then per entry a u32 name
//! length, the UTF-8 name, a u32 rank, `rank` u64 dimensions and the values
//! as f64 in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

pub fn write_params(path: &Path, params: &ParamSet) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn read_params(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let count = cur.u32().ok_or_else(|| bad("truncated"))?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = cur.u32().ok_or_else(|| bad("truncated"))? as usize;
        let name = std::str::from_utf8(cur.take(len).ok_or_else(|| bad("truncated"))?)
            .map_err(|_| bad("name is not UTF-8"))?
            .to_string();
        let rank = cur.u32().ok_or_else(|| bad("truncated"))? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated"))?;
        let n: usize = shape.iter().product();
        let raw = cur
            .take(n.checked_mul(8).ok_or_else(|| bad("shape overflow"))?)
            .ok_or_else(|| bad("truncated"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(name, Tensor::from_vec(&shape, data)?)?;
    }
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(params)
}

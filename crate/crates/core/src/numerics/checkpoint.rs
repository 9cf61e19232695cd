//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "FIMCKPT\0"
//! version    u32 LE    currently 1
//! count      u32 LE    number of tensors
//! per tensor, in lexicographic name order:
//!   name_len u32 LE, name (UTF-8)
//!   ndim     u32 LE, dims (u64 LE each)
//!   values   f64 LE, row-major
//! ```

use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{FimError, Result};

pub const MAGIC: &[u8; 8] = b"FIMCKPT\0";
pub const VERSION: u32 = 1;

pub fn encode(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
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
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| FimError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(FimError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FimError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| FimError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| FimError::Checkpoint("size".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        store.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(FimError::Checkpoint("trailing bytes".into()));
    }
    Ok(store)
}

pub fn save(params: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| FimError::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| FimError::io(path, e))?;
    decode(&bytes)
}

/// Copies values from `src` into `dst` by name; every name and shape must match.
pub fn restore_into(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    if dst.len() != src.len() {
        return Err(FimError::Checkpoint(format!("checkpoint has {} tensors, model expects {}", src.len(), dst.len())));
    }
    for id in dst.ids() {
        let name = dst.name(id).to_string();
        let t = src.by_name(&name).ok_or_else(|| FimError::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.shape() != dst.get(id).shape() {
            return Err(FimError::Checkpoint(format!("shape mismatch for `{name}`")));
        }
        *dst.get_mut(id) = t.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_roundtrip(values in prop::collection::vec(-1e6f64..1e6, 1..40), cols in 1usize..5) {
            let rows = values.len().div_ceil(cols);
            let mut data = values.clone();
            data.resize(rows * cols, 0.25);
            let mut s = ParamStore::new();
            s.insert("b.weight", Tensor::matrix(rows, cols, data).unwrap()).unwrap();
            s.insert("a.bias", Tensor::row(values)).unwrap();
            let back = decode(&encode(&s)).unwrap();
            for (_, name, t) in s.iter() {
                prop_assert_eq!(back.by_name(name).unwrap(), t);
            }
        }
    }

    #[test]
    fn header_is_checked() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(1.5)).unwrap();
        let mut bytes = encode(&s);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        bytes[8] = 9;
        assert!(decode(&bytes).is_err());
        let good = encode(&s);
        assert!(decode(&good[..good.len() - 1]).is_err());
    }
}

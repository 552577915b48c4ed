//! Byte-exact parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   "MLSCKPT\x01"
//! count     u32       number of arrays
//! repeated `count` times:
//!   name_len  u32
//!   name      name_len bytes of UTF-8
//!   ndim      u32
//!   extents   ndim × u64
//!   values    product(extents) × f64 (IEEE-754 binary64, little-endian)
//! ```
//!
//! Arrays appear in parameter-set order; nothing follows the last array.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"MLSCKPT\x01";

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let count = r.u32("array count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
            .to_owned();
        let ndim = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("extent overflow".into()))?, &name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamSet> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_exact() {
        let mut ps = ParamSet::new();
        ps.insert("ab", Tensor::matrix(1, 2, vec![1.0, -0.5]).unwrap()).unwrap();
        let bytes = encode(&ps);
        let mut expect = b"MLSCKPT\x01".to_vec();
        expect.extend([1, 0, 0, 0]);
        expect.extend([2, 0, 0, 0]);
        expect.extend(b"ab");
        expect.extend([2, 0, 0, 0]);
        expect.extend(1u64.to_le_bytes());
        expect.extend(2u64.to_le_bytes());
        expect.extend(1.0f64.to_le_bytes());
        expect.extend((-0.5f64).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn round_trip_preserves_bits() {
        let mut ps = ParamSet::new();
        ps.insert("scalar", Tensor::scalar(f64::MIN_POSITIVE)).unwrap();
        ps.insert("v", Tensor::vector(vec![0.1, -0.0, 1e300])).unwrap();
        ps.insert("empty", Tensor::zeros(vec![0, 3])).unwrap();
        let back = decode(&encode(&ps)).unwrap();
        assert_eq!(back, ps);
        assert_eq!(encode(&back), encode(&ps));
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let bytes = encode(&ps);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        assert!(decode(b"NOTACKPT").is_err());
    }
}

//! Flat named-tensor container.
//!
//! Byte layout (little-endian throughout):
//!
//! ```text
//! magic      6 bytes  b"SATENS"
//! version    u32      1
//! count      u32      number of tensors
//! repeated `count` times, sorted by name:
//!   name_len u32
//!   name     name_len bytes of UTF-8
//!   ndim     u32
//!   dims     ndim × u64
//!   data     prod(dims) × f64
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::DenseArray;

const MAGIC: &[u8; 6] = b"SATENS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, DenseArray>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: DenseArray) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&DenseArray> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::arg(format!("missing parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = pos
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::format(format!("truncated parameter file at byte {pos}")))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        if take(6)? != MAGIC {
            return Err(Error::format("missing SATENS magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(format!("unsupported parameter version {version}")));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(name_len)?)
                .map_err(|e| Error::format(format!("parameter name is not UTF-8: {e}")))?
                .to_owned();
            let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                let d = u64::from_le_bytes(take(8)?.try_into().unwrap());
                shape.push(
                    usize::try_from(d).map_err(|_| Error::format("dimension does not fit usize"))?,
                );
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::format(format!("`{name}` element count overflows")))?;
            let raw = take(n.checked_mul(8).ok_or_else(|| Error::format("tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = DenseArray::new(shape, data)
                .map_err(|e| Error::format(format!("tensor `{name}`: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::format(format!("duplicate tensor `{name}`")));
            }
        }
        if pos != bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after parameters",
                bytes.len() - pos
            )));
        }
        Ok(Self { tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let mut store = ParamStore::new();
        store.insert("b", DenseArray::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.0]).unwrap());
        store.insert("a", DenseArray::new(vec![3], vec![0.1, 0.2, 0.3]).unwrap());
        let bytes = store.to_bytes();
        assert_eq!(ParamStore::from_bytes(&bytes).unwrap(), store);
        assert_eq!(store.names().collect::<Vec<_>>(), vec!["a", "b"]);

        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ParamStore::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(ParamStore::from_bytes(&bad), Err(Error::Format(_))));
        assert!(store.get("missing").is_err());
    }
}

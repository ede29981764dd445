//! `GRNv1` parameter checkpoints.
//!
//! Layout, all integers little-endian `u64`:
//!
//! ```text
//! "GRNv1" count { name_len name_utf8 rank dim_0 .. dim_{rank-1} value_0 .. value_{n-1} }*
//! ```
//!
//! Values are stored as little-endian `f64`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"GRNv1";

/// An ordered list of named tensors as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor<f64>)>,
}

impl Checkpoint {
    pub fn from_params<T: Scalar>(params: &impl Parameterized<T>) -> Self {
        let entries = params.named_params().into_iter().map(|(n, t)| (n, t.cast())).collect();
        Self { entries }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Data("not a GRNv1 checkpoint (bad magic)".into()));
        }
        let count = r.u64()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = r.u64()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Data("checkpoint name is not UTF-8".into()))?
                .to_string();
            let rank = r.u64()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            if n.checked_mul(8).is_none_or(|b| b > r.remaining()) {
                return Err(Error::Data(format!("checkpoint entry {name} is truncated")));
            }
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, data).map_err(|e| Error::Data(format!("entry {name}: {e}")))?;
            entries.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(Error::Data(format!("{} trailing bytes after checkpoint", r.remaining())));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Copies every entry into `params`, which must have exactly the same
    /// names and shapes.
    pub fn restore<T: Scalar>(&self, params: &mut impl Parameterized<T>) -> Result<()> {
        let mut expected = Vec::new();
        params.visit("", &mut |n, t| expected.push((n.to_string(), t.shape().to_vec())));
        if expected.len() != self.entries.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, model expects {}",
                self.entries.len(),
                expected.len()
            )));
        }
        for ((name, shape), (cname, t)) in expected.iter().zip(&self.entries) {
            if name != cname || shape.as_slice() != t.shape() {
                return Err(Error::Data(format!(
                    "checkpoint entry {cname} {:?} does not match model parameter {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        let mut it = self.entries.iter();
        params.visit_mut("", &mut |_, p| {
            let (_, t) = it.next().expect("counts checked");
            *p = t.cast();
        });
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Data("unexpected end of checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! magic          8 bytes   "SSCMMDCK"
//! version        u32       1
//! epoch          u64       epochs completed
//! step           u64       optimizer steps taken
//! frozen_sigma   f64       kernel bandwidth frozen at first use, NaN if none
//! tensor_count   u32
//! tensor_count × { rows u64, cols u64, rows·cols × f64 (row-major) }
//! ```
//!
//! Tensors are the model parameters in [`super::Model::params`] order
//! followed by the optimizer velocities in the same order.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSCMMDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub step: u64,
    pub frozen_sigma: Option<f64>,
    pub tensors: Vec<Matrix<f64>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.frozen_sigma.unwrap_or(f64::NAN).to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let epoch = cur.u64()?;
        let step = cur.u64()?;
        let sigma = cur.f64()?;
        let count = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for i in 0..count {
            let rows = cur.u64()? as usize;
            let cols = cur.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|n| n.saturating_mul(8) <= bytes.len())
                .ok_or_else(|| Error::Checkpoint(format!("tensor {i}: implausible shape {rows}x{cols}")))?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(cur.f64()?);
            }
            tensors.push(
                Matrix::new(rows, cols, data)
                    .map_err(|e| Error::Checkpoint(format!("tensor {i}: {e}")))?,
            );
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self {
            epoch,
            step,
            frozen_sigma: (!sigma.is_nan()).then_some(sigma),
            tensors,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("bin.tmp");
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

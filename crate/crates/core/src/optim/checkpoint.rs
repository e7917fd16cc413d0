//! Versioned little-endian byte container for [`OptimState`].

use alloc::format;
use alloc::vec::Vec;

use super::OptimState;
use crate::error::{Error, Result};
use crate::params::{Group, Params};

const MAGIC: &[u8; 8] = b"PHOTOCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vals: &[f64]) {
        self.u64(vals.len() as u64);
        for v in vals {
            self.0.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    fn params(&mut self, p: &Params) {
        for g in Group::ALL {
            self.f64s(&p.values(g));
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        };
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint(format!("count overflows at byte {}", self.pos)))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Checkpoint(format!("array of {n} values exceeds the remaining data")));
        }
        (0..n).map(|_| Ok(f64::from_bits(self.u64()?))).collect()
    }
    fn params(&mut self, height: usize, width: usize) -> Result<Params> {
        let mut p = Params::zeros(height, width);
        for g in Group::ALL {
            let vals = self.f64s()?;
            if vals.len() != p.group_len(g) {
                return Err(Error::Checkpoint(format!(
                    "group {g} holds {} values, expected {}",
                    vals.len(),
                    p.group_len(g)
                )));
            }
            p.for_each_mut(g, |k, v| *v = vals[k]);
        }
        Ok(p)
    }
}

/// Serializes every field of the state bit-exactly.
pub fn encode(state: &OptimState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(state.params.height() as u64);
    w.u64(state.params.width() as u64);
    w.u64(state.step as u64);
    w.u64(state.level as u64);
    w.u64(state.level_step as u64);
    w.u64(state.seed);
    w.f64s(&state.history);
    w.params(&state.params);
    w.params(&state.m);
    w.params(&state.v);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<OptimState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let height = r.usize()?;
    let width = r.usize()?;
    if height.checked_mul(width).map_or(true, |n| n > bytes.len()) {
        return Err(Error::Checkpoint(format!("implausible grid {height}x{width}")));
    }
    let step = r.usize()?;
    let level = r.usize()?;
    let level_step = r.usize()?;
    let seed = r.u64()?;
    let history = r.f64s()?;
    let params = r.params(height, width)?;
    let m = r.params(height, width)?;
    let v = r.params(height, width)?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(OptimState { params, m, v, step, level, level_step, seed, history })
}

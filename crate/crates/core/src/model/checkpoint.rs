//! Binary parameter files.
//!
//! Layout (little-endian): magic `FCC1`, `u64` config length, JSON config,
//! `u64` tensor count, then per tensor `u32` name length, UTF-8 name,
//! `u32` rank, `u64` per dimension and the `f64` values.

use std::io::{Read, Write};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCC1";

pub fn write_checkpoint<S: Scalar>(
    mut w: impl Write,
    config: &ModelConfig,
    params: &ParamStore<S>,
) -> Result<()> {
    let json = serde_json::to_vec(config).map_err(|e| Error::Config(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (_, name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(format!(
                "truncated: needed {n} bytes for {what}, {} left",
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::Checkpoint {
            offset: at as u64,
            msg: format!("{what} {v} does not fit in memory"),
        })
    }

    fn fail(&self, msg: String) -> Error {
        Error::Checkpoint {
            offset: self.pos as u64,
            msg,
        }
    }
}

/// Parameters in checkpoint order, widened to f64.
pub type NamedTensors = Vec<(String, Tensor<f64>)>;

/// Parses a whole checkpoint; errors carry the byte offset where reading failed.
pub fn read_checkpoint(mut r: impl Read) -> Result<(ModelConfig, NamedTensors)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint {
            offset: 0,
            msg: "not a parameter checkpoint (bad magic)".into(),
        });
    }
    let config_len = c.len("config length")?;
    let config_at = c.pos;
    let config: ModelConfig = serde_json::from_slice(c.take(config_len, "config")?).map_err(|e| {
        Error::Checkpoint {
            offset: config_at as u64,
            msg: format!("bad config: {e}"),
        }
    })?;
    let count = c.len("tensor count")?;
    let mut tensors = Vec::new();
    for i in 0..count {
        let name_len = c.u32("name length")? as usize;
        let name_at = c.pos;
        let name = std::str::from_utf8(c.take(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint {
                offset: name_at as u64,
                msg: format!("tensor {i} name is not UTF-8"),
            })?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let shape = (0..rank).map(|_| c.len("dimension")).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| c.fail(format!("tensor `{name}` shape {shape:?} overflows")))?;
        let raw = c.take(
            numel.checked_mul(8).ok_or_else(|| c.fail("tensor too large".into()))?,
            &format!("tensor `{name}`"),
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| c.fail(format!("tensor `{name}`: {e}")))?;
        tensors.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(c.fail(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok((config, tensors))
}

//! Checkpoint container.
//!
//! Layout (little-endian): `ELMC`, u32 version, u32 length + config text,
//! u64 parameter count, f64 parameters, u64 step, u8 moment flag, then (if
//! the flag is 1) first and second Adam moments, one f64 per parameter each.

use std::path::Path;

use super::{parameter_count, ElmformerConfig};
use crate::error::{Error, Result};
use crate::kv::KeyValues;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ELMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ElmformerConfig,
    pub params: Vec<f64>,
    pub step: u64,
    pub moments: Option<OptimizerMoments>,
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let config = ck.config.to_kv().to_text();
    let n = ck.params.len();
    let moments = if ck.moments.is_some() { 2 * n } else { 0 };
    let mut out = Vec::with_capacity(29 + config.len() + 8 * (n + moments));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    push_f64s(&mut out, &ck.params);
    out.extend_from_slice(&ck.step.to_le_bytes());
    match &ck.moments {
        None => out.push(0),
        Some(m) => {
            out.push(1);
            push_f64s(&mut out, &m.first);
            push_f64s(&mut out, &m.second);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("parameter count overflows".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
    let mut kv = KeyValues::parse(text)?;
    let config = ElmformerConfig::from_kv(&mut kv)?;
    kv.reject_unknown()?;
    let n = r.u64()? as usize;
    let expected = parameter_count(&config)?;
    if n != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {n} parameters, its configuration needs {expected}"
        )));
    }
    let params = r.f64s(n)?;
    let step = r.u64()?;
    let moments = match r.take(1)?[0] {
        0 => None,
        1 => Some(OptimizerMoments {
            first: r.f64s(n)?,
            second: r.f64s(n)?,
        }),
        f => return Err(Error::Format(format!("bad optimizer flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        config,
        params,
        step,
        moments,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

//! Raw container, little-endian:
//!
//! ```text
//! "ELMR" | u32 version=1 | u32 height | u32 width | u8 cfa=0 | u8 dtype=0 | 2 reserved
//! | height·width f32, row-major
//! ```

use std::path::Path;

use super::{CfaPattern, RawImage};
use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"ELMR";
pub const RAW_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub fn encode_raw(raw: &RawImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * raw.data().len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    out.extend_from_slice(&(raw.height() as u32).to_le_bytes());
    out.extend_from_slice(&(raw.width() as u32).to_le_bytes());
    out.push(raw.cfa().code());
    out.push(0); // f32
    out.extend_from_slice(&[0, 0]);
    for v in raw.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode_raw(bytes: &[u8]) -> Result<RawImage> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("raw file truncated: {} header bytes", bytes.len())));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(Error::Format(format!("bad raw magic {:?}", &bytes[..4])));
    }
    let version = u32_at(bytes, 4);
    if version != RAW_VERSION {
        return Err(Error::Format(format!("unsupported raw version {version}")));
    }
    let (h, w) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize);
    CfaPattern::from_code(bytes[16])?;
    if bytes[17] != 0 {
        return Err(Error::Format(format!("unsupported raw dtype {}", bytes[17])));
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * h * w {
        return Err(Error::Format(format!(
            "raw payload holds {} bytes, {h}x{w} f32 needs {}",
            payload.len(),
            4 * h * w
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RawImage::new(h, w, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_raw(path: impl AsRef<Path>, raw: &RawImage) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_raw(raw)).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

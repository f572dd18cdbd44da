//! SCRLT binary tensor files.
//!
//! Layout (all integers little-endian):
//!   magic "SCRLT" | version u32 | dtype u32 (f32=1, f64=2) | rank u32 |
//!   dims u32[rank] | payload (row-major values) | crc32 u32
//!
//! The trailing CRC covers every preceding byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"SCRLT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

pub fn encode_tensor(t: &Tensor, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + 4 * t.rank() + t.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dtype as u32).to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        Dtype::F32 => {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < MAGIC.len() + 12 + 4 {
        return Err(Error::Format("scrlt: file too short".into()));
    }
    if &bytes[..5] != MAGIC {
        return Err(Error::Format("scrlt: bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(tail.try_into().unwrap());
    let crc = crc32fast::hash(body);
    if crc != stored_crc {
        return Err(Error::Format(format!(
            "scrlt: crc mismatch (stored {:08x}, computed {:08x})",
            stored_crc, crc
        )));
    }
    let u32_at = |at: usize| -> Result<u32> {
        body.get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::Format(format!("scrlt: truncated header at byte {at}")))
    };
    let version = u32_at(5)?;
    if version != VERSION {
        return Err(Error::Format(format!("scrlt: unsupported version {version}")));
    }
    let dtype = match u32_at(9)? {
        1 => Dtype::F32,
        2 => Dtype::F64,
        other => return Err(Error::Format(format!("scrlt: unknown dtype tag {other}"))),
    };
    let rank = u32_at(13)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(u32_at(17 + 4 * i)? as usize);
    }
    let payload = &body[17 + 4 * rank..];
    let n: usize = shape.iter().product();
    let width = match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    };
    if payload.len() != n * width {
        return Err(Error::Format(format!(
            "scrlt: payload is {} bytes but dims {:?} require {}",
            payload.len(),
            shape,
            n * width
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    Tensor::new(shape, data)
}

pub fn write_tensor(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(t, Dtype::F64)).map_err(|e| Error::io(path, e))
}

pub fn write_tensor_f32(t: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(t, Dtype::F32)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {}", path.display(), msg)),
        other => other,
    })
}

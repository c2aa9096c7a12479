//! DITF tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"DITF" | version: u8 = 1 | dtype: u8 (1 = f32, 2 = f64) | rank: u8 | rank × u32 extents | payload
//! ```
//!
//! The payload is the row-major element array in the declared dtype.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"DITF";
pub const VERSION: u8 = 1;

/// A decoded tensor of either supported precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + T::DTYPE.width() * t.len());
    encode_into(t, &mut out);
    out
}

pub fn encode_into<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    assert!(t.rank() <= u8::MAX as usize, "rank exceeds DITF limit");
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "DITF",
        reason: reason.into(),
    }
}

struct Header {
    dtype: DType,
    shape: Vec<usize>,
    payload_at: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(format_err("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(format_err(format!("unsupported version {}", bytes[4])));
    }
    let dtype =
        DType::from_code(bytes[5]).ok_or_else(|| format_err(format!("dtype {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    let payload_at = 7 + 4 * rank;
    if bytes.len() < payload_at {
        return Err(format_err("truncated header"));
    }
    let shape = (0..rank)
        .map(|i| u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    Ok(Header {
        dtype,
        shape,
        payload_at,
    })
}

fn decode_payload<T: Scalar>(bytes: &[u8], h: Header) -> Result<(Tensor<T>, usize)> {
    let n: usize = h.shape.iter().product();
    let w = T::DTYPE.width();
    let end = h.payload_at + n * w;
    if bytes.len() < end {
        return Err(format_err(format!(
            "payload needs {} bytes, have {}",
            n * w,
            bytes.len() - h.payload_at
        )));
    }
    let data = bytes[h.payload_at..end]
        .chunks_exact(w)
        .map(T::read_le)
        .collect();
    Ok((Tensor::new(h.shape, data)?, end))
}

/// Decodes one tensor of a known dtype from the front of `bytes`; returns it
/// with the number of bytes consumed.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    let h = parse_header(bytes)?;
    if h.dtype != T::DTYPE {
        return Err(format_err(format!(
            "stored dtype {:?}, requested {:?}",
            h.dtype,
            T::DTYPE
        )));
    }
    decode_payload(bytes, h)
}

pub fn decode_any(bytes: &[u8]) -> Result<(AnyTensor, usize)> {
    let h = parse_header(bytes)?;
    Ok(match h.dtype {
        DType::F32 => {
            let (t, n) = decode_payload(bytes, h)?;
            (AnyTensor::F32(t), n)
        }
        DType::F64 => {
            let (t, n) = decode_payload(bytes, h)?;
            (AnyTensor::F64(t), n)
        }
    })
}

pub fn write<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, used) = decode(&bytes)?;
    if used != bytes.len() {
        return Err(format_err("trailing bytes after tensor"));
    }
    Ok(t)
}

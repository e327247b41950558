//! Flat binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"SQCTENS1"
//! dtype    1 byte   0 = f32, 1 = f64, 2 = u8
//! ndim     1 byte
//! shape    ndim × u32
//! data     product(shape) elements, row-major
//! ```

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SQCTENS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
}

impl DType {
    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::U8),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

/// Serialize an array with the given on-disk dtype. Values are converted from
/// f64; `U8` stores `round(clamp(x, 0, 1) * 255)`.
pub fn encode(arr: &ArrayD<f64>, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 4 * arr.ndim() + arr.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    out.push(arr.ndim() as u8);
    for &d in arr.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in arr.iter() {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            DType::U8 => out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8),
        }
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<(ArrayD<f64>, DType)> {
    let bad = |r: &str| Error::format(origin, r);
    if bytes.len() < 10 || &bytes[..8] != MAGIC {
        return Err(bad("missing tensor magic"));
    }
    let dtype = DType::from_tag(bytes[8]).ok_or_else(|| bad("unknown dtype tag"))?;
    let ndim = bytes[9] as usize;
    let mut off = 10;
    if bytes.len() < off + 4 * ndim {
        return Err(bad("truncated shape"));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        shape.push(d as usize);
        off += 4;
    }
    let n: usize = shape.iter().product();
    let w = dtype.width();
    if bytes.len() != off + n * w {
        return Err(bad("payload length does not match shape"));
    }
    let data: Vec<f64> = bytes[off..]
        .chunks_exact(w)
        .map(|c| match dtype {
            DType::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
            DType::F64 => f64::from_le_bytes(c.try_into().unwrap()),
            DType::U8 => c[0] as f64 / 255.0,
        })
        .collect();
    let arr = ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| bad(&e.to_string()))?;
    Ok((arr, dtype))
}

pub fn write(path: &Path, arr: &ArrayD<f64>, dtype: DType) -> Result<()> {
    fs::write(path, encode(arr, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path).map(|(a, _)| a)
}

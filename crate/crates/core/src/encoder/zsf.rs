//! `ZSF1` feature files: magic, `u32` frame count, `u32` width, then
//! row-major little-endian `f32` frames.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"ZSF1";
const HEADER_LEN: usize = 12;

pub fn encode(frames: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + frames.as_slice().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(frames.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(frames.cols() as u32).to_le_bytes());
    for v in frames.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Matrix<f32>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("frame count overflows".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "{rows}x{cols} frames need {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn write(path: impl AsRef<Path>, frames: &Matrix<f32>) -> Result<()> {
    fs::write(path, encode(frames))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    decode(&fs::read(path)?)
}

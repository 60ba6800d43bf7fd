//! VGF binary grid files.
//!
//! Layout (little-endian): magic `VGF1`, `u32` dtype tag (0 = f32 scalar,
//! 1 = u8 mask), three `u32` dims, `f64` spacing in mm, then the payload in
//! x-fastest order.

use std::fs;
use std::path::Path;

use super::grid::{BinaryMask, Dims, ScalarGrid};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VGF1";
const HEADER_LEN: usize = 4 + 4 + 12 + 8;
const TAG_SCALAR: u32 = 0;
const TAG_MASK: u32 = 1;

/// Decoded VGF contents.
#[derive(Debug, Clone, PartialEq)]
pub enum VgfGrid {
    Scalar(ScalarGrid),
    Mask(BinaryMask),
}

fn header(tag: u32, dims: Dims, spacing: f64) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&tag.to_le_bytes());
    for d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&spacing.to_le_bytes());
    buf
}

pub fn encode_scalar(grid: &ScalarGrid) -> Vec<u8> {
    let mut buf = header(TAG_SCALAR, grid.dims(), grid.spacing());
    buf.reserve(grid.len() * 4);
    for &v in grid.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let mut buf = header(TAG_MASK, mask.dims(), mask.spacing());
    buf.extend(mask.bits().iter().map(|&b| b as u8));
    buf
}

pub fn decode(bytes: &[u8]) -> Result<VgfGrid> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Data(format!("VGF truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Data(format!("bad VGF magic {:?}", &bytes[..4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let tag = u32_at(4);
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    if dims.contains(&0) {
        return Err(Error::Data(format!("VGF dims must be positive, got {dims:?}")));
    }
    let spacing = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let n = dims[0] * dims[1] * dims[2];
    let payload = &bytes[HEADER_LEN..];
    match tag {
        TAG_SCALAR => {
            if payload.len() != n * 4 {
                return Err(Error::Data(format!(
                    "VGF payload length {} does not match dims {dims:?} (expected {})",
                    payload.len(),
                    n * 4
                )));
            }
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            Ok(VgfGrid::Scalar(ScalarGrid::new(dims, spacing, values)?))
        }
        TAG_MASK => {
            if payload.len() != n {
                return Err(Error::Data(format!(
                    "VGF payload length {} does not match dims {dims:?} (expected {n})",
                    payload.len()
                )));
            }
            let bits = payload
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Data(format!("VGF mask byte {other} is not 0/1"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(VgfGrid::Mask(BinaryMask::new(dims, spacing, bits)?))
        }
        other => Err(Error::Data(format!("unknown VGF dtype tag {other}"))),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_scalar(path: &Path, grid: &ScalarGrid) -> Result<()> {
    write_file(path, &encode_scalar(grid))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_file(path, &encode_mask(mask))
}

pub fn read(path: &Path) -> Result<VgfGrid> {
    decode(&read_file(path)?).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    match read(path)? {
        VgfGrid::Mask(m) => Ok(m),
        VgfGrid::Scalar(_) => Err(Error::Data(format!(
            "{}: expected a u8 mask VGF, found f32 scalar",
            path.display()
        ))),
    }
}

pub fn read_scalar(path: &Path) -> Result<ScalarGrid> {
    match read(path)? {
        VgfGrid::Scalar(g) => Ok(g),
        VgfGrid::Mask(_) => Err(Error::Data(format!(
            "{}: expected an f32 scalar VGF, found u8 mask",
            path.display()
        ))),
    }
}

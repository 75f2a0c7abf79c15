//! `DDK1` raw image grid files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! b"DDK1" | n | h | w | c | n*h*w*c payload bytes
//! ```
//!
//! The payload length must match the header exactly.

use std::path::Path;

use ndarray::Array2;

use super::{DataBatch, ImageShape};
use crate::error::{format_err, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 4] = b"DDK1";
const HEADER_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawGrid {
    pub n: usize,
    pub shape: ImageShape,
    pub payload: Vec<u8>,
}

impl RawGrid {
    pub fn into_batch(self) -> Result<DataBatch> {
        let bytes = Array2::from_shape_vec((self.n, self.shape.dim()), self.payload)
            .map_err(|e| format_err("raw grid", e.to_string()))?;
        DataBatch::from_bytes(bytes, Some(self.shape))
    }

    pub fn from_batch(batch: &DataBatch) -> Result<Self> {
        let discrete = batch
            .discrete()
            .ok_or_else(|| format_err("raw grid", "batch has no discrete origin"))?;
        let shape = batch.shape().unwrap_or(ImageShape {
            h: 1,
            w: batch.dim(),
            c: 1,
        });
        Ok(Self {
            n: batch.len(),
            shape,
            payload: discrete.iter().copied().collect(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        for v in [self.n, self.shape.h, self.shape.w, self.shape.c] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(format_err("raw grid", format!("header truncated at {} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(format_err("raw grid", "bad magic (expected DDK1)"));
        }
        let field = |i: usize| {
            let off = 4 + 4 * i;
            u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize
        };
        let (n, h, w, c) = (field(0), field(1), field(2), field(3));
        let expected = n
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| format_err("raw grid", "header dimensions overflow"))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(format_err(
                "raw grid",
                format!("payload has {} bytes, header declares {expected}", payload.len()),
            ));
        }
        if expected == 0 {
            return Err(format_err("raw grid", "empty grid"));
        }
        Ok(Self {
            n,
            shape: ImageShape { h, w, c },
            payload: payload.to_vec(),
        })
    }
}

pub fn read(path: &Path) -> Result<RawGrid> {
    RawGrid::decode(&std::fs::read(path)?)
}

pub fn write(path: &Path, grid: &RawGrid) -> Result<()> {
    write_atomic(path, &grid.encode())
}

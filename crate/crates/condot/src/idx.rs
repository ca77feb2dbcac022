//! Reader for IDX-formatted uint8 image tensors.
//!
//! The format is: big-endian magic `0x00000803` (3-dimensional uint8 tensor),
//! three big-endian u32 dimensions (count, rows, cols), then `count * rows *
//! cols` raw bytes. Pixels are scaled to `[0, 1]` by dividing by 255.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// Magic number of a 3-dimensional uint8 IDX tensor.
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Images loaded from an IDX file, flattened row-major to `(count, rows*cols)`
/// with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct IdxImages {
    pub images: Array2<f64>,
    pub rows: usize,
    pub cols: usize,
}

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxTruncated {
            expected: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an in-memory IDX image tensor.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxBadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;

    let pixels = rows
        .checked_mul(cols)
        .and_then(|p| p.checked_mul(count))
        .ok_or_else(|| {
            Error::IdxOverflow(format!("{count} x {rows} x {cols} overflows usize"))
        })?;

    let payload = &bytes[16..];
    if payload.len() < pixels {
        return Err(Error::IdxTruncated {
            expected: pixels,
            found: payload.len(),
        });
    }

    let per_image = rows * cols;
    let mut images = Array2::zeros((count, per_image));
    for (i, byte) in payload[..pixels].iter().enumerate() {
        images[[i / per_image.max(1), i % per_image.max(1)]] = *byte as f64 / 255.0;
    }
    Ok(IdxImages { images, rows, cols })
}

/// Reads and parses an IDX image file from disk.
pub fn load_idx(path: &Path) -> Result<IdxImages> {
    let bytes = fs::read(path)?;
    parse_idx(&bytes)
}

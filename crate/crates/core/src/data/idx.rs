//! IDX (MNIST-style) image and label files: big-endian header, u8 payload.

use std::fs;
use std::path::Path;

use super::{Dataset, DEFAULT_VAL_FRACTION};
use crate::error::{LdbError, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| LdbError::Format {
            offset: offset as u64,
            message: format!("truncated {what}"),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0, "magic number")?;
    if magic != expected {
        return Err(LdbError::Format {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

fn payload(bytes: &[u8], start: usize, len: usize) -> Result<&[u8]> {
    let end = start + len;
    if bytes.len() < end {
        return Err(LdbError::Format {
            offset: bytes.len() as u64,
            message: format!("truncated payload: expected {len} bytes from offset {start}"),
        });
    }
    Ok(&bytes[start..end])
}

/// Parses an image file into a `[N, 1, rows, cols]` tensor scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    if n == 0 || rows == 0 || cols == 0 {
        return Err(LdbError::Format {
            offset: 4,
            message: format!("empty image dimensions {n}x{rows}x{cols}"),
        });
    }
    let raw = payload(bytes, 16, n * rows * cols)?;
    let data = raw.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let n = be_u32(bytes, 4, "label count")? as usize;
    Ok(payload(bytes, 8, n)?.iter().map(|&b| b as usize).collect())
}

/// Loads an image/label file pair. Classes are `max(label) + 1` (at least 2);
/// 20% of the samples are held out for validation.
pub fn load_idx_images(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = fs::read(images_path).map_err(|e| LdbError::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| LdbError::io(labels_path, e))?;
    let features = parse_idx_images(&images)?;
    let labels = parse_idx_labels(&labels)?;
    if labels.len() != features.rows() {
        return Err(LdbError::Data(format!(
            "{} labels for {} images",
            labels.len(),
            features.rows()
        )));
    }
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(features, labels, classes, DEFAULT_VAL_FRACTION, 0)
}

/// Serializes `[N, rows, cols]`-shaped u8 pixels as an IDX image file.
pub fn write_idx_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

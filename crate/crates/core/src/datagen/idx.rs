//! IDX (MNIST) big-endian binary reader.

use std::path::Path;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale digit images scaled to `[0, 1]` with their 0-9 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDigits {
    pub rows: usize,
    pub cols: usize,
    /// `len * rows * cols` pixels, image-major.
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

impl RawDigits {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let sz = self.rows * self.cols;
        &self.pixels[i * sz..(i + 1) * sz]
    }

    pub fn take(&self, n: usize) -> RawDigits {
        self.range(0..n)
    }

    /// Copy of the images with indices in `r`, clipped to the set.
    pub fn range(&self, r: std::ops::Range<usize>) -> RawDigits {
        let end = r.end.min(self.len());
        let start = r.start.min(end);
        let sz = self.rows * self.cols;
        RawDigits {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[start * sz..end * sz].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("slice of 4")))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: format!("truncated header: need 4 bytes, file has {}", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    Ok(())
}

/// Parses an IDX image file body. Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated image data: header promises {need} pixel bytes, found {}", body.len()),
        });
    }
    let pixels = body[..need].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated label data: header promises {n} labels, found {}", body.len()),
        });
    }
    if let Some(pos) = body[..n].iter().position(|&l| l > 9) {
        return Err(Error::Format {
            offset: (8 + pos) as u64,
            message: format!("label {} is not a digit", body[pos]),
        });
    }
    Ok(body[..n].to_vec())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDigits> {
    let read = |p: &Path| -> Result<Vec<u8>> {
        if !p.exists() {
            return Err(Error::MissingData(p.to_path_buf()));
        }
        std::fs::read(p).map_err(|e| Error::io(p, e))
    };
    let (n, rows, cols, pixels) = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("image count {n} does not match label count {}", labels.len()),
        });
    }
    Ok(RawDigits {
        rows,
        cols,
        pixels,
        labels,
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn image_file(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    pub fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }
}

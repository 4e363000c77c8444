//! The IDX container: big-endian magic, big-endian u32 dimension sizes,
//! then unsigned bytes.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::LabeledDataset;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: PathBuf::from(path),
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, bytes.len(), "truncated header"))
}

/// Returns `(pixels scaled to [0,1], count, rows·cols)`.
pub fn load_idx_images(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(
            path,
            0,
            format!("expected image magic {IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let dim = rows * cols;
    let expected = 16 + count * dim;
    if bytes.len() < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload: header declares {count}x{rows}x{cols}, need {expected} bytes"),
        ));
    }
    let pixels = bytes[16..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((pixels, count, dim))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(
            path,
            0,
            format!("expected label magic {LABELS_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() < 8 + count {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated payload: header declares {count} labels"),
        ));
    }
    Ok(bytes[8..8 + count].iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label file pair. The class count is `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (pixels, count, dim) = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(format_err(
            labels_path,
            4,
            format!(
                "label count {} does not match image count {count} in {}",
                labels.len(),
                images_path.display()
            ),
        ));
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    LabeledDataset::new(pixels, labels, dim, classes)
}

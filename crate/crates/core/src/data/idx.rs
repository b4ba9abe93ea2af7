//! Big-endian IDX container (as used by MNIST-family datasets).

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Result, SpaflError};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| SpaflError::data_at(offset as u64, "file truncated inside header"))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(SpaflError::data_at(
            0,
            format!("bad IDX magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

/// Parses an image file into `(n, rows, cols)` pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if n == 0 {
        return Err(SpaflError::data_at(4, "image file declares zero images"));
    }
    if rows == 0 || cols == 0 {
        return Err(SpaflError::data_at(8, "image file declares an empty image size"));
    }
    let body = &bytes[16..];
    let need = n * rows * cols;
    if body.len() < need {
        return Err(SpaflError::data_at(
            bytes.len() as u64,
            format!("image data truncated: {} of {need} pixel bytes present", body.len()),
        ));
    }
    let data = body[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[n, rows, cols], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    if n == 0 {
        return Err(SpaflError::data_at(4, "label file declares zero labels"));
    }
    let body = &bytes[8..];
    if body.len() < n {
        return Err(SpaflError::data_at(
            bytes.len() as u64,
            format!("label data truncated: {} of {n} bytes present", body.len()),
        ));
    }
    Ok(body[..n].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label file pair. Samples get shape `(1, rows, cols)`;
/// the class count is the largest label plus one (at least 2).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if images.rows() != labels.len() {
        return Err(SpaflError::data_at(
            4,
            format!("{} images but {} labels", images.rows(), labels.len()),
        ));
    }
    let (rows, cols) = (images.shape()[1], images.shape()[2]);
    let n = labels.len();
    let samples = images.reshape(&[n, 1, rows, cols])?;
    let n_classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(samples, labels, n_classes)
}

/// Writes a dataset with `[0, 1]` pixels and image-shaped samples as an IDX pair.
pub fn write_idx(dataset: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let shape = dataset.sample_shape();
    let (rows, cols) = match *shape {
        [r, c] | [1, r, c] => (r, c),
        _ => return Err(SpaflError::data(format!("cannot write samples of shape {shape:?} as IDX images"))),
    };
    let n = dataset.len();
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(
        dataset
            .samples()
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    for &y in dataset.labels() {
        let b = u8::try_from(y).map_err(|_| SpaflError::data(format!("label {y} does not fit in a byte")))?;
        lab.push(b);
    }
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

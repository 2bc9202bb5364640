//! IDX (MNIST-style) unsigned-byte image and label files.
//!
//! Headers are big-endian: a 4-byte magic (`0x00000803` for rank-3 image
//! arrays, `0x00000801` for label vectors) followed by one `u32` per axis.

use std::fs;
use std::path::Path;

use super::{ImageDataset, ImageShape};
use crate::error::{Error, FormatError, Result};
use crate::numkit::DenseTensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, FormatError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(FormatError::Truncated {
            needed: offset + 4,
            available: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), FormatError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(FormatError::IdxMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8], FormatError> {
    bytes.get(header..header + len).ok_or(FormatError::Truncated {
        needed: header + len,
        available: bytes.len(),
    })
}

/// Returns `(count, rows, cols, pixels scaled to [0, 1])`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f32>), FormatError> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let raw = payload(bytes, 16, count * rows * cols)?;
    let pixels = raw.iter().map(|&b| b as f32 / 255.0).collect();
    Ok((count, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, FormatError> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    Ok(payload(bytes, 8, count)?.iter().map(|&b| b as usize).collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an image/label file pair; the class count is one past the largest label (at least 2).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ImageDataset> {
    let (count, rows, cols, pixels) = parse_idx_images(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    if labels.len() != count {
        return Err(FormatError::CountMismatch {
            images: count,
            labels: labels.len(),
        }
        .into());
    }
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::Parameter("IDX file holds no pixels".into()));
    }
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let images = DenseTensor::new(&[count, rows, cols, 1], pixels)?;
    ImageDataset::new(images, labels, classes)
}

/// Writes `dataset` as an IDX pair, quantizing pixels to `round(255 * v)`.
/// Only single-channel datasets with labels below 256 are representable.
pub fn write_idx(
    dataset: &ImageDataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let ImageShape {
        height,
        width,
        channels,
    } = dataset.image_shape();
    if channels != 1 || dataset.classes() > 256 {
        return Err(Error::Parameter(
            "IDX export needs one channel and at most 256 classes".into(),
        ));
    }
    let mut img = Vec::with_capacity(16 + dataset.images().len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [dataset.len(), height, width] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend(
        dataset
            .images()
            .data()
            .iter()
            .map(|&v| (v as f64 * 255.0 + 0.5).floor() as u8),
    );
    let mut lab = Vec::with_capacity(8 + dataset.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    lab.extend(dataset.labels().iter().map(|&l| l as u8));

    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b
    }

    #[test]
    fn labels_with_image_magic_rejected() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[2]);
        bytes.extend_from_slice(&[0, 1]);
        assert_eq!(
            parse_idx_labels(&bytes).unwrap_err(),
            FormatError::IdxMagic {
                expected: IDX_LABELS_MAGIC,
                found: IDX_IMAGES_MAGIC
            }
        );
    }

    #[test]
    fn truncated_images_rejected() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
        bytes.extend_from_slice(&[0; 7]);
        assert!(matches!(
            parse_idx_images(&bytes),
            Err(FormatError::Truncated { needed: 24, available: 23 })
        ));
        assert!(matches!(
            parse_idx_images(&bytes[..6]),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn zero_bytes_give_zero_pixels() {
        let mut bytes = header(IDX_IMAGES_MAGIC, &[1, 3, 3]);
        bytes.extend_from_slice(&[0; 9]);
        let (n, r, c, px) = parse_idx_images(&bytes).unwrap();
        assert_eq!((n, r, c), (1, 3, 3));
        assert!(px.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        let mut img = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
        img.extend_from_slice(&[255; 8]);
        let mut lab = header(IDX_LABELS_MAGIC, &[3]);
        lab.extend_from_slice(&[0, 1, 1]);
        fs::write(&ip, img).unwrap();
        fs::write(&lp, lab).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(
            err,
            Error::Format(FormatError::CountMismatch { images: 2, labels: 3 })
        ));
    }
}

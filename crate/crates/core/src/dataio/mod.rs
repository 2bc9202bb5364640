//! Datasets, model archives and export formats.

mod archive;
mod export;
mod idx;
mod shapes;

pub use archive::{load_model, save_model, ModelArchive, Section, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use export::{encode_curve_csv, encode_pgm, write_curve_csv, write_pgm};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use shapes::{synth_shapes, ShapeKind};

use crate::error::{Error, FormatError, Result};
use crate::numkit::DenseTensor;

/// Height, width and channel count of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Flattened length including channels.
    pub fn len(&self) -> usize {
        self.pixels() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

/// `N x H x W x C` images in `[0, 1]` with labels below `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    images: DenseTensor,
    labels: Vec<usize>,
    classes: usize,
}

impl ImageDataset {
    pub fn new(images: DenseTensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::shape("dataset", images.shape(), &[0, 0, 0, 0]));
        }
        if images.shape()[0] != labels.len() {
            return Err(FormatError::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            }
            .into());
        }
        if let Some((index, &value)) = images
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Range { index, value });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(FormatError::Label {
                index,
                label,
                classes,
            }
            .into());
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &DenseTensor {
        &self.images
    }

    pub fn image_shape(&self) -> ImageShape {
        let s = self.images.shape();
        ImageShape::new(s[1], s[2], s[3])
    }

    /// Flattened pixels of image `i`.
    pub fn pixels(&self, i: usize) -> &[f32] {
        self.images.row(i)
    }

    /// Image `i` as an `H x W x C` tensor.
    pub fn image(&self, i: usize) -> DenseTensor {
        DenseTensor::new(&self.image_shape().dims(), self.pixels(i).to_vec())
            .expect("dataset rows match image shape")
    }
}

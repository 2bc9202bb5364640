use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {op} got {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("value {value} at index {index} outside [0, 1]")]
    Range { index: usize, value: f32 },

    #[error("curve fractions must be nondecreasing within [0, 1] (row {row})")]
    Order { row: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss:e}")]
    Training { epoch: usize, loss: f64 },

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Parse failures for the IDX and RLDM binary formats.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic { expected: u32, found: u32 },

    #[error("truncated payload: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("bad archive magic {0:?}")]
    ArchiveMagic([u8; 4]),

    #[error("unsupported archive version {0}")]
    ArchiveVersion(u16),

    #[error("section {name:?}: payload is {actual} bytes, dims imply {expected}")]
    SectionLength {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("duplicate section {0:?}")]
    DuplicateSection(String),

    #[error("missing section {0:?}")]
    MissingSection(String),

    #[error("unknown dtype tag {0}")]
    DType(u8),

    #[error("section name is not valid UTF-8")]
    SectionName,

    #[error("{0} trailing bytes after last section")]
    TrailingBytes(usize),

    #[error("label {label} at index {index} not below class count {classes}")]
    Label {
        index: usize,
        label: usize,
        classes: usize,
    },
}

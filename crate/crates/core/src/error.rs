use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dim {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("no {what} for class label(s) {labels:?}")]
    MissingClass { what: &'static str, labels: Vec<u32> },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Failures decoding one of the on-disk formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    Version(u16),

    #[error("file truncated while reading {0}")]
    Truncated(String),

    #[error("trailing bytes after payload")]
    TrailingBytes,

    #[error("feature dimension must be at least 1")]
    ZeroDim,

    #[error("labels are not a contiguous range: {0}")]
    NonDenseLabels(String),

    #[error("duplicate class label {0}")]
    DuplicateLabel(u32),

    #[error("inconsistent shape table: {0}")]
    ShapeTable(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

//! Error types shared across the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for every fallible pipeline operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("index {index} out of range for {len} classes")]
    Index { index: usize, len: usize },

    /// A precondition of the called operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The object is in the wrong lifecycle state for the operation.
    #[error("invalid state: {0}")]
    State(String),

    /// Input data disagrees with the declared schema or label set.
    #[error("data error: {0}")]
    Data(String),

    #[error("incompatible inputs: {0}")]
    Compatibility(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Dimension { op, left, right }
    }
}

/// Failures while decoding a checkpoint file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("tensor {name}: declared {rows}x{cols} disagrees with {detail}")]
    Shape {
        name: String,
        rows: u64,
        cols: u64,
        detail: String,
    },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Failures while reading a dataset manifest.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record {id}: {message}")]
    Validation { id: String, message: String },
}

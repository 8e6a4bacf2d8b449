use std::io;
use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("tensor of shape {shape} needs {} values, got {len}", shape.numel())]
    DataLength { shape: Shape, len: usize },

    #[error("expected a scalar tensor, got shape {0}")]
    NotScalar(Shape),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: unsupported image format (magic {magic:?}, expected \"P6\")")]
    UnsupportedFormat { path: PathBuf, magic: String },

    #[error("{path}: unsupported maxval {maxval}, expected 255")]
    UnsupportedMaxval { path: PathBuf, maxval: u32 },

    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("missing files:\n{}", .0.iter().map(|p| format!("  {}", p.display())).collect::<Vec<_>>().join("\n"))]
    MissingFiles(Vec<PathBuf>),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?}, expected format version AQFT1")]
    BadMagic { found: Vec<u8> },

    #[error("truncated while reading {what}")]
    Truncated { what: String },

    #[error("tensor {name:?} has dimensions {dims:?} that overflow the file size")]
    DimensionOverflow { name: String, dims: [u32; 4] },

    #[error("tensor {name:?} has shape {found}, architecture expects {expected}")]
    ShapeMismatch {
        name: String,
        expected: Shape,
        found: Shape,
    },

    #[error("tensor {0:?} missing from checkpoint")]
    MissingTensor(String),

    #[error("tensor {0:?} not part of the architecture")]
    UnexpectedTensor(String),

    #[error("tensor name is not valid UTF-8")]
    BadName,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

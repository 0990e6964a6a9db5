use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error("bad magic: expected \"T2DM\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("unsupported rank {0} (expected 1, 2 or 3)")]
    UnsupportedRank(u8),

    #[error("reserved header byte must be zero, found {0}")]
    ReservedByte(u8),

    #[error("truncated {what}: expected {expected} bytes, got {got}")]
    Truncated {
        what: &'static str,
        expected: u64,
        got: u64,
    },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("zero-sized dimension in shape {0:?}")]
    EmptyDimension(Vec<u64>),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("saved forward state is stale or inconsistent: {0}")]
    StaleSavedState(String),

    #[error("no tissue positions in mask")]
    NoTissue,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_mismatch(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}

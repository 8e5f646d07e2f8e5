use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{layer}: expected {expected} input channels, got {got}")]
    ChannelMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },

    #[error("function returned a non-finite value at coordinate {index}")]
    NonFiniteAt { index: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("loss became non-finite at iteration {iter}")]
    NonFiniteLoss { iter: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Image(#[from] ImageError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: not an RCKP checkpoint")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint inconsistent with configuration: {0}")]
    Inconsistent(String),

    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format `{0}` (only binary P6 is supported)")]
    UnsupportedFormat(String),

    #[error("malformed PPM header: {0}")]
    BadHeader(String),

    #[error("unsupported PPM maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),

    #[error("PPM payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("image I/O: {0}")]
    Io(#[from] io::Error),
}

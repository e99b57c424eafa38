//! Error type shared across the pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("wavelength axis mismatch: {0}")]
    AxisMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coordinates ({x}, {y}) out of bounds for {width}x{height} cube")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("ENVI header: missing key `{0}`")]
    MissingHeaderKey(String),

    #[error("ENVI header: {0}")]
    MalformedHeader(String),

    #[error("unknown interleave `{0}` (expected bsq, bil or bip)")]
    UnknownInterleave(String),

    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("empty mask: no fruit pixels to crop to")]
    EmptyMask,

    #[error("no visible band: axis {low:.1}-{high:.1} nm does not overlap 380-740 nm")]
    NoVisibleBand { low: f64, high: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

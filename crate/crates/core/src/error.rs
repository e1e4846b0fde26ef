use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to decode image: {0}")]
    Decode(String),

    #[error("expected {expected} channel(s), got {actual}")]
    Channel { expected: u8, actual: u8 },

    #[error("image is too small: {width}x{height} (need at least {min} on each side)")]
    TooSmall { width: usize, height: usize, min: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("degenerate image: zero total mass")]
    DegenerateImage,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("no keypoint passed the detection threshold")]
    EmptyResult,

    #[error("not enough data: {available} descriptors for {requested} clusters")]
    NotEnoughData { available: usize, requested: usize },

    #[error("vocabulary mismatch: index has {index} words, bundle has {bundle}")]
    VocabMismatch { index: usize, bundle: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("not an index file (bad magic bytes)")]
    BadMagic,

    #[error("unsupported index format version {0}")]
    FormatVersion(u8),

    #[error("index checksum mismatch (file truncated or corrupted)")]
    Checksum,

    #[error("malformed index: {0}")]
    Format(String),

    #[error("dataset layout error at {path}: {reason}")]
    Layout { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("pipeline failed: {failed} of {total} images could not be processed")]
    Pipeline { failed: usize, total: usize },
}

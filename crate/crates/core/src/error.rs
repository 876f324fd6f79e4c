//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by scene construction, rendering, optimization and I/O.
#[derive(Error, Debug)]
pub enum Error {
    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Spherical-harmonics degree outside the supported 0..=3 range.
    #[error("unsupported SH degree {0} (supported: 0..=3)")]
    UnsupportedDegree(usize),

    /// Query time outside the keyframe / pose timeline range.
    #[error("time {t} outside covered range [{first}, {last}]")]
    TimeOutOfRange { t: f64, first: f64, last: f64 },

    /// Index past the end of a flattened primitive set or buffer.
    #[error("index {index} out of bounds (len {len})")]
    IndexOutOfBounds { index: usize, len: usize },

    /// Two buffers that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation that needs at least one element got none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A gradient or loss became non-finite during optimization.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Malformed on-disk data.
    #[error("format error: {0}")]
    Format(String),

    /// File header version not understood by this build.
    #[error("unsupported scene file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    /// Bad key or value in a run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Unknown synthetic scene recipe name.
    #[error("unknown recipe '{0}'")]
    UnknownRecipe(String),

    /// Another process holds the output directory lock.
    #[error("output directory locked by another invocation: {0}")]
    Locked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Png(#[from] image::ImageError),

    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, Error>;

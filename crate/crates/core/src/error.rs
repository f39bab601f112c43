use std::path::PathBuf;

use thiserror::Error;

use crate::optimize::OptTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid image dimensions {height}x{width}x{channels}")]
    InvalidDims {
        height: usize,
        width: usize,
        channels: usize,
    },

    #[error("inverse transform left a residual imaginary part of {max_imag:e}")]
    ResidualImag { max_imag: f64 },

    #[error("score {name} = {value} lies outside [0, 1]")]
    ScoreOutOfRange { name: &'static str, value: f64 },

    #[error("iteration count {n} exceeds the stack depth {max}")]
    IterationOutOfRange { n: usize, max: usize },

    #[error("channel count {0} is odd; rotary fields act on channel pairs")]
    OddChannels(usize),

    #[error("{channels} channels cannot be split into {heads} heads of even width")]
    HeadDivisibility { channels: usize, heads: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("image {height}x{width} is smaller than the required {min}x{min}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("non-finite gradient")]
    NonfiniteGradient,

    #[error("non-finite loss at step {step}")]
    NonfiniteLoss { step: usize, trace: Box<OptTrace> },

    #[error("blur kernel sums to {sum} (must be 1 and nonnegative)")]
    KernelNotNormalized { sum: f64 },

    #[error("invalid kernel spec: {0}")]
    InvalidKernelSpec(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    UnsupportedImage { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

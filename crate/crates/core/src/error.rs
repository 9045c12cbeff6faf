use std::io;

use thiserror::Error;

/// Failures raised by the single-pair rotation codec.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("digit budget lambda={0} is outside the supported range 1..=4")]
    LambdaOutOfRange(u32),
    #[error("coefficient {0} is not a finite positive number")]
    InvalidCoefficient(f64),
    #[error("point ({x}, {y}) is outside the representable disk x^2 + y^2 <= 4")]
    OutsideDisk { x: f64, y: f64 },
    #[error("point ({x}, {y}) is not finite")]
    NonFinite { x: f64, y: f64 },
    #[error("rotation code {code} exceeds the code modulus {modulus}")]
    CodeOutOfRange { code: u64, modulus: u64 },
}

/// Failures while reading or writing tensor containers and packed payloads.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated input: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FormatError {
    /// True when the failure came from the filesystem rather than the bytes.
    pub fn is_io(&self) -> bool {
        matches!(self, FormatError::Io(_))
    }
}

/// Failures on tensor inputs handed to quantization or the optimizers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements but {actual} values were given")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Failures raised by the optimizers.
#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter shape {params:?} does not match gradient shape {grads:?}")]
    ShapeMismatch { params: Vec<usize>, grads: Vec<usize> },
    #[error("non-finite gradient {value} at index {index}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("optimizer {moment} overflowed to a non-finite value at index {index}")]
    StateOverflow { moment: &'static str, index: usize },
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("state manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

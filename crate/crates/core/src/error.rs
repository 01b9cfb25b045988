//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid shape in {context}: {message}")]
    InvalidShape { context: String, message: String },

    #[error("gradient requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("node {node} has no bound value")]
    UnboundInput { node: usize },

    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("label restoration is ambiguous; candidates {candidates:?}")]
    AmbiguousLabel { candidates: Vec<usize> },

    #[error("model build failed at layer {layer}: {message}")]
    ModelBuild { layer: usize, message: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("model fingerprint mismatch: capture {capture:016x}, model {model:016x}")]
    FingerprintMismatch { capture: u64, model: u64 },

    #[error("gradient length {actual} does not match model parameter count {expected}")]
    GradientLength { expected: usize, actual: usize },

    #[error("prior set is empty but activation or style weights are positive")]
    EmptyPriors,

    #[error("capture format error: {0}")]
    CaptureFormat(String),

    #[error("image format error: {0}")]
    ImageFormat(String),

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("manifest error at line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub fn invalid_shape(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidShape {
            context: context.into(),
            message: message.into(),
        }
    }
}

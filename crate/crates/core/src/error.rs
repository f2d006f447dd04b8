use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    InvalidInput { what: &'static str, reason: String },

    #[error("dimension mismatch: image {image:?} vs mask {mask:?}")]
    DimMismatch { image: [usize; 3], mask: [usize; 3] },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("region of interest mask is empty")]
    EmptyMask,

    #[error("value {value} at index {index} is outside the quantization range [{lo}, {hi}]")]
    QuantizationRange { value: f64, index: usize, lo: f64, hi: f64 },

    #[error("no admissible voxel pairs inside the mask{}", channel.map(|c| format!(" (channel {c})")).unwrap_or_default())]
    NoPairs { channel: Option<usize> },

    #[error("spacing ratio {ratio:.3} exceeds isotropy tolerance {tolerance}; use the anisotropic (slice-wise) builder")]
    WrongRegime { ratio: f64, tolerance: f64 },

    #[error("GLCM probabilities sum to {sum}, expected 1")]
    Unnormalized { sum: f64 },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("AUC undefined for class {class}: need both positive and negative samples")]
    UndefinedAuc { class: usize },

    #[error("class {class} has {count} samples, fewer than {k} folds")]
    Stratification { class: usize, count: usize, k: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("{path}: malformed header: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("{path}: truncated payload, expected {expected} bytes, found {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },

    #[error("{path}: payload has {actual} bytes but header implies {expected}")]
    PayloadSize { path: PathBuf, expected: usize, actual: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput { what, reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Json { .. }
            | Error::Csv { .. }
            | Error::Header { .. }
            | Error::Truncated { .. }
            | Error::PayloadSize { .. } => ErrorKind::Io,
            Error::NoPairs { .. } | Error::Diverged { .. } | Error::Unnormalized { .. } => {
                ErrorKind::Numeric
            }
            _ => ErrorKind::Validation,
        }
    }
}

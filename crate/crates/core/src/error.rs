use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes. The CLI maps these onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Malformed, missing or inconsistent input data or arguments.
    Input,
    /// A numerical routine failed (singular matrix, NaN, non-convergence).
    Numerical,
    /// A source-based estimator was asked to run without validation arrays.
    MissingValidation,
}

/// Problems found while decoding an NPY or CSV array.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic bytes (not an NPY file)")]
    BadMagic,
    #[error("unsupported NPY version {0}.{1} (only 1.0 is accepted)")]
    UnsupportedVersion(u8, u8),
    #[error("fortran_order arrays are not supported")]
    FortranOrder,
    #[error("unsupported dtype {0:?} (expected <f4, <f8 or <i8)")]
    UnsupportedDtype(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported rank {0} (expected 1 or 2)")]
    UnsupportedRank(usize),
    #[error("truncated data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("ragged CSV: line {line} has {found} fields, expected {expected}")]
    RaggedCsv {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unparseable CSV value {value:?} on line {line}")]
    BadCsvValue { line: usize, value: String },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("unsupported file extension {0:?} (expected .npy or .csv)")]
    UnknownExtension(String),
    #[error("empty array")]
    Empty,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },

    #[error("missing mandatory array `{0}`")]
    MissingArray(String),

    #[error("shape mismatch between `{first}` {first_shape:?} and `{second}` {second_shape:?}")]
    ShapeMismatch {
        first: String,
        first_shape: Vec<usize>,
        second: String,
        second_shape: Vec<usize>,
    },

    #[error("label {label} in `{array}` outside [0, {classes})")]
    LabelOutOfRange {
        array: String,
        label: i64,
        classes: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("matrix is singular even with jitter {jitter:e}")]
    Singular { jitter: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("method `{method}` needs validation logits and labels")]
    MissingValidation { method: String },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. }
            | Error::Format { .. }
            | Error::MissingArray(_)
            | Error::ShapeMismatch { .. }
            | Error::LabelOutOfRange { .. }
            | Error::InvalidInput(_)
            | Error::DimensionMismatch { .. } => ErrorCategory::Input,
            Error::Degenerate(_)
            | Error::Singular { .. }
            | Error::NoConvergence { .. }
            | Error::Numerical(_) => ErrorCategory::Numerical,
            Error::MissingValidation { .. } => ErrorCategory::MissingValidation,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

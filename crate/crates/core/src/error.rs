use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used for process exit codes and host-side exception mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input data (tensors, files).
    Input,
    /// Invalid hyperparameters or configuration files.
    Config,
    /// Filesystem failures.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },

    #[error("negative attention score at flat index {index}")]
    NegativeScore { index: usize },

    #[error("invalid segment list: {0}")]
    InvalidSegments(String),

    #[error("retain ratio must lie in (0, 1], got {0}")]
    InvalidRatio(f64),

    #[error("keep count {k} exceeds frame length {len}")]
    BudgetExceedsFrame { k: usize, len: usize },

    #[error("selection coverage gap: {0}")]
    CoverageGap(String),

    #[error("schedule length {found} does not match layer count {expected}")]
    ScheduleMismatch { expected: usize, found: usize },

    #[error("histogram is empty or bin counts differ")]
    EmptyHistogram,

    #[error("invalid synthetic video spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("configuration conflict: {0}")]
    ConfigConflict(String),

    #[error("unknown shape preset `{0}`")]
    UnknownPreset(String),

    #[error("unsupported dtype `{found}`: {hint}")]
    UnsupportedDtype { found: String, hint: &'static str },

    #[error("unsupported array shape {0}")]
    UnsupportedShape(String),

    #[error("corrupt NPY header: {0}")]
    CorruptHeader(String),

    #[error("NPY payload truncated: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },

    #[error("run directory failed verification: {0}")]
    CorruptRun(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidRatio(_)
            | Error::InvalidConfig(_)
            | Error::ConfigConflict(_)
            | Error::UnknownPreset(_) => ErrorKind::Config,
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Input,
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::NegativeScore { .. } => "NegativeScore",
            Error::InvalidSegments(_) => "InvalidSegments",
            Error::InvalidRatio(_) => "InvalidRatio",
            Error::BudgetExceedsFrame { .. } => "BudgetExceedsFrame",
            Error::CoverageGap(_) => "CoverageGap",
            Error::ScheduleMismatch { .. } => "ScheduleMismatch",
            Error::EmptyHistogram => "EmptyHistogram",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::ConfigConflict(_) => "ConfigConflict",
            Error::UnknownPreset(_) => "UnknownPreset",
            Error::UnsupportedDtype { .. } => "UnsupportedDtype",
            Error::UnsupportedShape(_) => "UnsupportedShape",
            Error::CorruptHeader(_) => "CorruptHeader",
            Error::TruncatedData { .. } => "TruncatedData",
            Error::CorruptRun(_) => "CorruptRun",
            Error::Io(_) => "Io",
        }
    }

    pub(crate) fn shape(expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            found: found.into(),
        }
    }
}

/// Every variant code, in declaration order.
pub const ERROR_CODES: &[&str] = &[
    "ShapeMismatch",
    "NonFiniteValue",
    "NegativeScore",
    "InvalidSegments",
    "InvalidRatio",
    "BudgetExceedsFrame",
    "CoverageGap",
    "ScheduleMismatch",
    "EmptyHistogram",
    "InvalidSpec",
    "InvalidConfig",
    "ConfigConflict",
    "UnknownPreset",
    "UnsupportedDtype",
    "UnsupportedShape",
    "CorruptHeader",
    "TruncatedData",
    "CorruptRun",
    "Io",
];

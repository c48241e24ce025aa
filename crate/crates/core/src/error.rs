use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor ops, model construction, and file I/O.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A single dimension does not satisfy an op's contract.
    DimMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },
    /// Two operands have incompatible shapes.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A scalar argument or configuration value is out of range.
    InvalidArg { op: &'static str, msg: String },
    /// A NaN or infinity was produced or consumed.
    NonFinite { op: &'static str },
    /// A class label is outside [0, num_classes) and is not the ignore index.
    LabelOutOfRange { label: i64, classes: usize },
    /// An operation that needs at least one element got none.
    Empty { op: &'static str },
    /// File parsing or serialization failure.
    Format { msg: String },
    /// Underlying I/O failure (message only, to keep the enum comparable).
    Io { msg: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimMismatch {
                op,
                dim,
                expected,
                got,
            } => write!(f, "{op}: dimension {dim} expected {expected}, got {got}"),
            Self::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch lhs={lhs:?} rhs={rhs:?}")
            }
            Self::InvalidArg { op, msg } => write!(f, "{op}: {msg}"),
            Self::NonFinite { op } => write!(f, "{op}: non-finite value (NaN or Inf)"),
            Self::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            Self::Empty { op } => write!(f, "{op}: empty input"),
            Self::Format { msg } => write!(f, "format error: {msg}"),
            Self::Io { msg } => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Self::Io { msg: e.to_string() }
    }
}

//! Crate-wide error type and result alias.

use std::fmt;

/// Unified error for tensor math, model assembly, coding, training and I/O.
///
/// Variants are grouped so the command-line frontend can map them onto its
/// exit-code contract: usage problems, malformed files and numeric failures
/// each carry a distinct code.
#[derive(Debug)]
pub enum Error {
    /// Two operands or a parameter/gradient pair disagree in shape.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A shape with a zero extent was requested; tensors are always non-empty.
    ZeroExtent { shape: Vec<usize> },
    /// Reshape target does not preserve the element count.
    ReshapeCount {
        from: Vec<usize>,
        to: Vec<usize>,
    },
    /// A reduction or indexing axis is out of range or repeated.
    InvalidAxis { axis: usize, ndim: usize },
    /// Elementwise division hit a zero divisor.
    DivisionByZero { op: &'static str },
    /// A non-finite value (NaN or infinity) reached an operation boundary.
    /// `context` names the operation or loss term that produced it.
    NonFinite { context: String },
    /// The scalar function handed to the gradient checker returned different
    /// values for identical parameters.
    NotPure { delta: f64 },
    /// A configuration value is outside its documented domain.
    Config { message: String },
    /// A file or byte stream does not match its documented layout.
    Format { message: String },
    /// An entropy-coded payload ended early or decoded an impossible symbol.
    Codec { message: String },
    /// Command-line arguments are inconsistent or incomplete.
    Usage { message: String },
    /// Underlying filesystem failure.
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => {
                write!(f, "shape mismatch in {op}: {left:?} vs {right:?}")
            }
            Error::ZeroExtent { shape } => {
                write!(f, "zero extent in shape {shape:?}; tensors must be non-empty")
            }
            Error::ReshapeCount { from, to } => {
                write!(f, "reshape {from:?} -> {to:?} changes the element count")
            }
            Error::InvalidAxis { axis, ndim } => {
                write!(f, "axis {axis} invalid or repeated for a rank-{ndim} tensor")
            }
            Error::DivisionByZero { op } => write!(f, "division by zero in {op}"),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::NotPure { delta } => {
                write!(f, "function not pure: repeated evaluation differed by {delta:e}")
            }
            Error::Config { message } => write!(f, "invalid configuration: {message}"),
            Error::Format { message } => write!(f, "format error: {message}"),
            Error::Codec { message } => write!(f, "codec error: {message}"),
            Error::Usage { message } => write!(f, "usage error: {message}"),
            Error::Io { path, source } => write!(f, "io error on {path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl Error {
    /// Process exit code for the CLI: 2 usage, 3 malformed input, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage { .. } | Error::Config { .. } => 2,
            Error::Format { .. } | Error::Codec { .. } | Error::Io { .. } => 3,
            Error::NonFinite { .. }
            | Error::DivisionByZero { .. }
            | Error::NotPure { .. } => 4,
            Error::ShapeMismatch { .. }
            | Error::ZeroExtent { .. }
            | Error::ReshapeCount { .. }
            | Error::InvalidAxis { .. } => 3,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Error::Format {
            message: message.into(),
        }
    }

    pub fn codec(message: impl Into<String>) -> Self {
        Error::Codec {
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config {
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Error::Usage {
            message: message.into(),
        }
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.

use std::fmt;

/// Errors produced by matrix construction, conversion, kernels, dispatch,
/// and training.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A structural invariant of a storage format is violated
    /// (e.g. non-monotone CSR row pointers, out-of-range indices).
    Structure(String),
    /// Operand shapes are incompatible.
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
        context: String,
    },
    /// An axis length does not divide evenly into the blocks a format
    /// requires; the caller must pad first.
    Divisibility {
        axis_len: usize,
        divisor: usize,
        context: String,
    },
    /// A parameter is outside its documented range.
    InvalidParameter(String),
    /// Input is degenerate for the requested metric (e.g. zero L1 norm).
    DegenerateInput(String),
    /// A contract between two tensors is violated (e.g. pruned support
    /// not contained in the original support).
    ContractViolation(String),
    /// A conversion that is not in the lossless table was requested.
    ConversionRefused {
        from: String,
        to: String,
    },
    /// Operator or sparsifier lookup failed with no dense route available.
    NoImplementation(String),
    /// Exhaustive-search bound exceeded.
    EnumerationBound { size: usize, bound: usize },
    /// Operation invoked in the wrong state (e.g. backward before forward).
    State(String),
    /// File or serialization problem.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Structure(msg) => write!(f, "structural invariant violated: {msg}"),
            Error::ShapeMismatch {
                expected,
                got,
                context,
            } => write!(
                f,
                "shape mismatch in {context}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::Divisibility {
                axis_len,
                divisor,
                context,
            } => write!(
                f,
                "axis length {axis_len} not divisible by {divisor} in {context} (pad the input)"
            ),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::DegenerateInput(msg) => write!(f, "degenerate input: {msg}"),
            Error::ContractViolation(msg) => write!(f, "contract violation: {msg}"),
            Error::ConversionRefused { from, to } => {
                write!(f, "conversion {from} -> {to} is not lossless; refused")
            }
            Error::NoImplementation(msg) => write!(f, "no implementation: {msg}"),
            Error::EnumerationBound { size, bound } => write!(
                f,
                "enumeration size {size} exceeds the exhaustive-search bound {bound}"
            ),
            Error::State(msg) => write!(f, "invalid state: {msg}"),
            Error::Io(msg) => write!(f, "i/o error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

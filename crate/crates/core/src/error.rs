use core::fmt;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A basis/scenario/coordinate index is outside its declared range.
    IndexOutOfRange { what: &'static str, index: usize, limit: usize },
    /// A time or space argument lies outside the problem domain.
    OutOfDomain { what: &'static str, value: f64 },
    /// Array shapes of two arguments do not line up.
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    /// An integer quantity (factorial, index-set cardinality) would overflow its guard.
    Overflow { what: &'static str },
    /// A non-finite value was encountered where finite input is required.
    NonFinite { what: &'static str },
    /// A parameter value is invalid for the requested construction.
    InvalidParameter { what: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::IndexOutOfRange { what, index, limit } => {
                write!(f, "{what}: index {index} out of range (limit {limit})")
            }
            Error::OutOfDomain { what, value } => {
                write!(f, "{what}: argument {value} outside domain")
            }
            Error::DimensionMismatch { what, expected, got } => {
                write!(f, "{what}: dimension mismatch (expected {expected}, got {got})")
            }
            Error::Overflow { what } => write!(f, "{what}: integer overflow"),
            Error::NonFinite { what } => write!(f, "{what}: non-finite value"),
            Error::InvalidParameter { what } => write!(f, "invalid parameter: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A scalar or vector argument outside its documented domain.
    InvalidInput { what: &'static str, detail: String },
    /// Vector or parameter block length does not match the expected shape.
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    /// Index outside `0..bound`.
    OutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidInput {
            what,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput { what, detail } => write!(f, "invalid {what}: {detail}"),
            Error::ShapeMismatch {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected length {expected}, got {got}"),
            Error::OutOfRange { what, index, bound } => {
                write!(f, "{what} index {index} out of range 0..{bound}")
            }
        }
    }
}

impl core::error::Error for Error {}

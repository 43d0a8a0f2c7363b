use alloc::string::String;
use core::fmt;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A precondition on an argument does not hold.
    Argument(String),
    /// Operand shapes are incompatible.
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    /// All codebook rows coincide, so centering leaves nothing to scale.
    DegenerateCodebook,
    /// A numerical routine failed (e.g. a non positive-definite matrix).
    Numeric(String),
    /// Training produced a non-finite objective.
    Diverged { iteration: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Shape { op, left, right } => {
                write!(f, "shape mismatch in {op}: {}x{} vs {}x{}", left.0, left.1, right.0, right.1)
            }
            Error::DegenerateCodebook => {
                write!(f, "degenerate codebook: all rows identical after centering")
            }
            Error::Numeric(msg) => write!(f, "numerical failure: {msg}"),
            Error::Diverged { iteration } => {
                write!(f, "training diverged (non-finite objective) at iteration {iteration}")
            }
        }
    }
}

impl core::error::Error for Error {}

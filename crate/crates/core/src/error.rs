use alloc::string::String;
use core::fmt;

/// Errors surfaced by tensor kernels, attention assembly, and model plumbing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's contract.
    ShapeMismatch(String),
    /// A spatial extent is not divisible by the required factor.
    Indivisible(String),
    /// An attention or model configuration violates its invariants.
    InvalidConfig(String),
    /// An operation produced a NaN or infinity.
    NonFinite(String),
    /// A mask row allows no tokens, so softmax over it is undefined.
    EmptyMaskRow(usize),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Indivisible(msg) => write!(f, "indivisible extent: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::EmptyMaskRow(row) => write!(f, "mask row {row} allows no tokens"),
        }
    }
}

impl core::error::Error for Error {}

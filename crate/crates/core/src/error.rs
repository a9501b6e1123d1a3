//! Error type shared by every stage of the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("calibration needs at least one sample")]
    EmptyCalibration,

    #[error("scale slot {slot} has absolute maximum 0")]
    AllZeroSlot { slot: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid scale set: {0}")]
    InvalidScales(String),

    #[error("config violation: {0}")]
    ConfigViolation(String),

    #[error("flag {flag} exceeds the maximum of {max}")]
    CorruptFlag { flag: u32, max: u32 },

    #[error("group length mismatch: {lhs} vs {rhs}")]
    LengthMismatch { lhs: usize, rhs: usize },

    #[error("shift of {shift} bits would overflow the 64-bit accumulator")]
    ShiftOverflow { shift: u32 },

    #[error("invalid matmul plan: {0}")]
    PlanInvalid(String),

    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported version {0}")]
    BadVersion(u16),

    #[error("stream truncated: needed {needed} bytes, {available} available")]
    TruncatedStream { needed: usize, available: usize },

    #[error("flag {flag} in group {group} exceeds the maximum of {max}")]
    FlagOutOfRange { group: usize, flag: u32, max: u32 },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("unsupported value: {0}")]
    UnsupportedValue(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Stable variant name, used for machine-readable error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyCalibration => "EmptyCalibration",
            Error::AllZeroSlot { .. } => "AllZeroSlot",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::InvalidTensor(_) => "InvalidTensor",
            Error::InvalidScales(_) => "InvalidScales",
            Error::ConfigViolation(_) => "ConfigViolation",
            Error::CorruptFlag { .. } => "CorruptFlag",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::ShiftOverflow { .. } => "ShiftOverflow",
            Error::PlanInvalid(_) => "PlanInvalid",
            Error::BadMagic(_) => "BadMagic",
            Error::BadVersion(_) => "BadVersion",
            Error::TruncatedStream { .. } => "TruncatedStream",
            Error::FlagOutOfRange { .. } => "FlagOutOfRange",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::UnsupportedValue(_) => "UnsupportedValue",
            Error::InvariantViolation(_) => "InvariantViolation",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

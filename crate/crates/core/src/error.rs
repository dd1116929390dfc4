use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    Shape { op: &'static str, detail: String },
    EmptyAxis { op: &'static str, axis: usize },
    KernelTooLarge { kernel: usize, padded: usize },
    TargetOutOfRange { target: usize, classes: usize },
    NotScalar { shape: String },
    TooFewPoints { distinct: usize },
    InvalidValue(String),
    InvalidConfig(String),
    MissingClasses { raw_file: String },
    DuplicateRecord { raw_file: String },
    NonFinite { what: String },
    LossScaleUnderflow { scale: f64 },
    Unsupported(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for failures caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::LossScaleUnderflow { .. })
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "{op}: dimension mismatch: {detail}"),
            Error::EmptyAxis { op, axis } => write!(f, "{op}: axis {axis} is empty"),
            Error::KernelTooLarge { kernel, padded } => write!(
                f,
                "conv2d: kernel size {kernel} exceeds padded input extent {padded}"
            ),
            Error::TargetOutOfRange { target, classes } => {
                write!(f, "target index {target} out of range for {classes} classes")
            }
            Error::NotScalar { shape } => write!(f, "expected a scalar, got shape {shape}"),
            Error::TooFewPoints { distinct } => write!(
                f,
                "spline needs at least 2 distinct y values, got {distinct}"
            ),
            Error::InvalidValue(msg) => write!(f, "invalid value: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::MissingClasses { raw_file } => {
                write!(f, "record {raw_file:?} has no lane classes")
            }
            Error::DuplicateRecord { raw_file } => {
                write!(f, "duplicate raw_file {raw_file:?}")
            }
            Error::NonFinite { what } => write!(f, "non-finite value: {what}"),
            Error::LossScaleUnderflow { scale } => {
                write!(f, "loss scale underflowed below 1 (now {scale})")
            }
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

use alloc::string::String;
use core::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Shape/dimension mismatch between operands; names both shapes.
    Dim(String),
    /// A caller violated an operation contract (wrong label range, empty
    /// input list, non-scalar loss, ...).
    Contract(String),
    /// Lookup of an id (token, segment, task, modality) outside its table.
    Lookup(String),
    /// Invalid or inconsistent configuration.
    Config(String),
    /// Input too small/degenerate for the operation (e.g. layer norm over a
    /// single column, waveform shorter than one frame).
    Degenerate(String),
    /// Non-finite values where finite ones are required.
    Numeric(String),
    /// CTC alignment is impossible (label too long for the frame count).
    Infeasible(String),
    /// Malformed checkpoint/container bytes (bad magic, CRC, truncation).
    Format(String),
    /// Checkpoint does not match the current model/config.
    Version(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim(m) => write!(f, "dimension error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Lookup(m) => write!(f, "lookup error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Degenerate(m) => write!(f, "degenerate input: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Infeasible(m) => write!(f, "infeasible: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Version(m) => write!(f, "version error: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! err {
    ($kind:ident, $($arg:tt)*) => {
        $crate::error::Error::$kind(alloc::format!($($arg)*))
    };
}
pub(crate) use err;

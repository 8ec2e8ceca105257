use alloc::string::String;

/// Errors raised by the core algorithms.
///
/// Variants mirror the failure classes of the individual operations so callers
/// can map them onto exit codes or user messages without string matching.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid phantom spec: {0}")]
    Spec(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;

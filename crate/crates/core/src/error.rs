use alloc::string::String;

/// Errors raised by the solvers, builders and estimators in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller supplied an out-of-range index, count or parameter.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A layout or configuration could not be turned into a model.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A linear system could not be solved.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Logged data violates an estimator precondition.
    #[error("invalid data: {0}")]
    Data(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;

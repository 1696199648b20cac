//! Crate-wide error type.

use alloc::string::String;
use thiserror::Error;

/// Errors produced by the laboratory.
///
/// The variants map onto the stable process exit codes of the `lenrl` CLI:
/// `Config` and `Contract` are usage errors (exit 2), `Numerical` is an
/// abort of a running computation (exit 3).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Invalid configuration or input data.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A computation produced non-finite values and was aborted.
    #[error("numerical abort: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

/// Shorthand for building a `Config` error from format arguments.
#[macro_export]
macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::Error::Config(alloc::format!($($arg)*))
    };
}

/// Shorthand for building a `Contract` error from format arguments.
#[macro_export]
macro_rules! contract_err {
    ($($arg:tt)*) => {
        $crate::Error::Contract(alloc::format!($($arg)*))
    };
}

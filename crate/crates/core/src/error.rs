use thiserror::Error;

/// Errors raised by the kernels, metrics and estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument violated a precondition (nonpositive radius, empty input, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Arrays that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A configuration entry could not be turned into a transform.
    #[error("config error in {entry}: {reason}")]
    Config { entry: String, reason: String },

    /// A robust or closed-form estimator had no usable solution.
    #[error("estimation failed: {0}")]
    Estimation(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

/// Failure classes shared by every module.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Invalid parameters or mismatched inputs.
    #[error("configuration error: {0}")]
    Config(String),
    /// A numerical routine failed to converge or produced non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// The scenario data violates a structural requirement (e.g. terminal
    /// values outside the domain of the convex function).
    #[error("scenario error: {0}")]
    Scenario(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Scenario(_) => "scenario",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

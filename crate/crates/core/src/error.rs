use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter or argument lies outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// An iterative routine failed to converge.
    #[error("numerical error in {context}: {detail}")]
    Numerical { context: String, detail: String },

    /// A vine structure violates a tree or proximity requirement.
    #[error("structure error: {0}")]
    Structure(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("dimension guard: {0}")]
    Guard(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    /// Stable short identifier, used by front ends for machine-readable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Numerical { .. } => "numerical",
            Error::Structure(_) => "structure",
            Error::Lookup(_) => "lookup",
            Error::Guard(_) => "guard",
            Error::Serde(_) => "serde",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An input violates a structural contract (e.g. a non-Hermitian "Hamiltonian").
    #[error("contract violation: {0}")]
    Contract(String),

    /// The requested computation exceeds the desk-scale resource guard.
    #[error("resource limit: {0}")]
    Resource(String),

    /// An iterative numerical method failed. `fallback` carries the best
    /// available estimate when one exists.
    #[error("numerical failure: {message}")]
    Numerical {
        message: String,
        fallback: Option<f64>,
    },

    /// A derived analysis could not be carried out on the supplied data.
    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

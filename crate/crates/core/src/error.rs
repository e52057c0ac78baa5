use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, widths or settings that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A non-finite value appeared in the named term.
    #[error("numerical failure in `{term}`")]
    Numerical { term: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn numerical(term: impl Into<String>) -> Self {
        Error::Numerical { term: term.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Fails with [`Error::Numerical`] naming `term` unless `x` is finite.
pub fn ensure_finite(term: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::numerical(term))
    }
}

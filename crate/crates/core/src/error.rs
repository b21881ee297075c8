use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("transition matrix is reducible: states {unreachable:?} are not strongly connected to state 1")]
    Reducible { unreachable: Vec<usize> },

    #[error("transition matrix is not ergodic: second eigenvalue modulus {nu_star} >= 1")]
    NotErgodic { nu_star: f64 },

    #[error("zero likelihood at time index {t} (no state can emit the observed value)")]
    ZeroLikelihood { t: usize },

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

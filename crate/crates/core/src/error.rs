use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Cholesky failed even with the largest allowed diagonal jitter.
    #[error("correlation matrix not positive definite (last jitter {jitter:e})")]
    FactorizationFailure { jitter: f64 },

    #[error("argument outside the admissible domain: {0}")]
    Domain(String),

    /// `kappa'(s) - delta_min` never changed sign on the expanded bracket.
    #[error("saddlepoint equation has no bracketed root for delta_min={delta_min}")]
    NoBracket { delta_min: f64 },

    #[error("simulator failed at x={x:?}: {message}")]
    Simulator { x: Vec<f64>, message: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular or indefinite system: {0}")]
    Singular(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("optimizer stopped after {iterations} iterations with stationarity {stationarity:.3e}")]
    NotConverged { iterations: usize, stationarity: f64 },
    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("matrix market: {0}")]
    MatrixMarket(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

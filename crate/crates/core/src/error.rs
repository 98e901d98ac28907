use thiserror::Error;

/// Errors produced by the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("row index {0} out of range (n = {1})")]
    RowOutOfRange(usize, usize),

    #[error("matrix is not positive definite{}", .0.as_ref().map(|s| format!(": {s}")).unwrap_or_default())]
    NotPositiveDefinite(Option<String>),

    #[error("ill-conditioned model: {0}")]
    IllConditioned(String),

    #[error("region probability below the underflow floor {floor:e}")]
    RegionUnderflow { floor: f64 },

    #[error("numerically degenerate censoring region for observation {row}: region probability below {floor:e}")]
    DegenerateRegion { row: usize, floor: f64 },

    #[error("column {0}: {1}")]
    ColumnFailure(usize, String),

    #[error("solver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

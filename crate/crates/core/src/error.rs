use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("matrix is not symmetric: max |A - A^T| = {max_asymmetry:e}")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("cholesky decomposition failed at pivot {pivot} (value {value:e})")]
    Decomposition { pivot: usize, value: f64 },

    #[error("numeric breakdown: {0}")]
    NumericBreakdown(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("parameter dimension {dim} exceeds dense threshold {threshold}; use the conjugate-gradient path")]
    TooLarge { dim: usize, threshold: usize },

    #[error("ERM solver did not converge after {iterations} Newton steps (gradient norm {grad_norm:e})")]
    Convergence { iterations: usize, grad_norm: f64 },

    #[error("combinatorial budget exceeded: {required} refits needed, cap is {cap}")]
    Budget { required: u128, cap: u128 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unparseable cell at row {row}, column {col}: {value:?}")]
    Parse { row: usize, col: usize, value: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

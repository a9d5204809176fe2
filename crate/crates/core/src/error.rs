use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum ScafdsError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("infeasible marginals: {0}")]
    Infeasible(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("state error: {0}")]
    State(String),

    #[error("{features} features exceed the exact Shapley cap of {cap}; use shapley_sampled")]
    TooManyFeatures { features: usize, cap: usize },

    #[error("non-finite loss at epoch {epoch} (last finite loss {last_finite:?} at epoch {last_finite_epoch:?})")]
    NanLoss {
        epoch: usize,
        last_finite: Option<f64>,
        last_finite_epoch: Option<usize>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ScafdsError>;

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::ScafdsError::Shape(format!($($arg)*)) };
}
macro_rules! domain_err {
    ($($arg:tt)*) => { $crate::error::ScafdsError::Domain(format!($($arg)*)) };
}
pub(crate) use domain_err;
pub(crate) use shape_err;

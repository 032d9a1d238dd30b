use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite after {attempts} jitter attempts")]
    Factorization { attempts: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("Polya-Gamma sampler exceeded {cap} proposals (c = {tilt})")]
    SamplerFault { cap: usize, tilt: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("transform failed: {0}")]
    Transform(String),

    #[error("aggregation failed: {0}")]
    Aggregation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

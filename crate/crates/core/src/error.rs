use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("no observations")]
    NoObservations,

    #[error("correlation matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("bridge is not monotone: {0}")]
    NonMonotoneBridge(String),

    #[error("insufficient pairwise-complete data for components ({j}, {k})")]
    InsufficientData { j: usize, k: usize },

    #[error("transform unidentifiable: {0}")]
    Unidentifiable(String),

    #[error("optimizer did not converge after {iterations} iterations (objective {objective:e}, gradient norm {gradient_norm:e})")]
    NonConvergence {
        iterations: usize,
        objective: f64,
        gradient_norm: f64,
        best: Vec<f64>,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

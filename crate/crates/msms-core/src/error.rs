//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid baseline grid: {0}")]
    InvalidGrid(String),

    #[error("frailty correlation undefined: transition {0} has all-zero loadings")]
    DegenerateLoadings(u8),

    #[error("parameter layout mismatch: {0}")]
    Layout(String),

    #[error("invalid model spec: {0}")]
    ModelSpec(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("design error: {0}")]
    Design(String),

    #[error("{path}: {count} invalid rows; first: {first}")]
    CsvValidation {
        path: String,
        count: usize,
        first: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("non-finite likelihood contribution for patient {patient} (spell {spell})")]
    NonFiniteLikelihood { patient: String, spell: usize },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("fit did not converge after {iterations} iterations (gradient norm {grad_norm:.3e}, tolerance {threshold:.3e})")]
    NotConverged {
        iterations: usize,
        grad_norm: f64,
        threshold: f64,
    },

    #[error("covariance unavailable: {0}")]
    Covariance(String),

    #[error("Wald test error: {0}")]
    Wald(String),

    #[error("duration effect error: {0}")]
    Att(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

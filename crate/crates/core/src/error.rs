//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv parse failure: {0}")]
    Csv(String),

    #[error("non-numeric cell {value:?} at row {row}, column {column}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("ragged csv: row {row} has {got} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },

    #[error("non-finite cell at row {row}, column {column}")]
    NonFiniteCell { row: usize, column: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error("column {column:?} has zero variance within dataset {dataset}")]
    ZeroVariance { column: String, dataset: usize },

    #[error("design is rank deficient (column {column} is linearly dependent)")]
    RankDeficient { column: usize },

    #[error("singular matrix in {context}")]
    Singular { context: String },

    #[error("quadrature did not converge (relative change {change:.2e} after max refinement)")]
    QuadratureNonConvergence { change: f64 },

    #[error("marginal likelihoods compare fits of different responses (fingerprint mismatch)")]
    FingerprintMismatch,

    #[error("enumeration guard exceeded: {pairs} joint model pairs > {limit}; tighten the common-size constraints")]
    EnumerationGuard { pairs: u64, limit: u64 },

    #[error("numerical failure at iteration {iteration}: {context}")]
    Mcmc { iteration: usize, context: String },
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Structurally invalid problem data (dimension mismatch, crossed bounds,
    /// non-finite entries, asymmetric quadratic term).
    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    /// Invalid solver or generator configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Cardinality budget outside the admissible range for the dimension.
    #[error("cardinality budget {k} out of range for dimension {n}")]
    BudgetOutOfRange { k: usize, n: usize },

    /// A subproblem solve that the caller cannot recover from.
    #[error("subproblem solve failed: {0}")]
    SubproblemFailure(String),

    /// Enumeration request larger than the configured budget guard.
    #[error("enumeration refused: {0}")]
    EnumerationBudget(String),

    /// Malformed instance file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Underlying I/O failure while reading or writing instance files.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Instance generation could not produce a feasible instance.
    #[error("instance generation failed: {0}")]
    Generation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by dataset validation, fitting, and I/O.
#[derive(Debug, Error)]
pub enum CondoError {
    /// Feature widths or batch shapes disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Confounder schemas disagree (names, order, or kinds).
    #[error("confounder schema mismatch: {0}")]
    SchemaMismatch(String),

    /// A caller-supplied argument is out of contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed input file (CSV or model JSON), with location context.
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally well-formed input violating an invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A category token that was not seen when the estimator was fitted.
    #[error("unknown category '{0}'")]
    UnknownCategory(String),

    /// A matrix that must be invertible is not.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// Residual covariance is singular and no ridge was applied.
    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    /// det(A) <= 0 where a log-determinant is required.
    #[error("non-positive determinant: det(A) = {0}")]
    NonPositiveDeterminant(f64),

    /// The 1-d closed form has no positive solution.
    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),

    /// A numerical routine failed after all retries.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CondoError {
    /// True for errors of a numerical nature (as opposed to bad input data).
    /// The CLI maps these to a distinct exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            CondoError::SingularMatrix(_)
                | CondoError::SingularCovariance(_)
                | CondoError::NonPositiveDeterminant(_)
                | CondoError::DegenerateProblem(_)
                | CondoError::NumericalFailure(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, CondoError>;

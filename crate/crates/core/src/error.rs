use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
///
/// Variant names double as the stable identifiers printed by the CLI.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("malformed model document: {0}")]
    ParseError(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("covariance matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("covariance matrix is not symmetric: {0}")]
    NotSymmetric(String),
    #[error("argument outside the domain: {0}")]
    DomainError(String),
    #[error("contradictory constraints: {0}")]
    InfeasibleConstraints(String),
    #[error("iteration limit reached: {0}")]
    MaxIterations(String),
    #[error("index partition failed: {0}")]
    PartitionFailure(String),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("singular submatrix: {0}")]
    SingularSubmatrix(String),
    #[error("theta too small for the asymptotic form: {0}")]
    ThetaTooSmall(String),
    #[error("exponent overflow: {0}")]
    Overflow(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("unsupported dimension: {0}")]
    DimensionUnsupported(String),
    #[error("Gaver-Stehfest term count must be even, got {0}")]
    OddM(usize),
    #[error("Gaver-Stehfest term count {0} outside 2..=18")]
    MTooLarge(usize),
    #[error("quadrature dimension too large: {0}")]
    DimensionTooLarge(String),
    #[error("quadrature did not converge: {0}")]
    NonConvergent(String),
}

impl Error {
    /// The variant name, e.g. `"NotPositiveDefinite"`.
    pub fn name(&self) -> &'static str {
        match self {
            Error::ParseError(_) => "ParseError",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NotPositiveDefinite(_) => "NotPositiveDefinite",
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::DomainError(_) => "DomainError",
            Error::InfeasibleConstraints(_) => "InfeasibleConstraints",
            Error::MaxIterations(_) => "MaxIterations",
            Error::PartitionFailure(_) => "PartitionFailure",
            Error::PreconditionViolation(_) => "PreconditionViolation",
            Error::SingularSubmatrix(_) => "SingularSubmatrix",
            Error::ThetaTooSmall(_) => "ThetaTooSmall",
            Error::Overflow(_) => "Overflow",
            Error::NoConvergence(_) => "NoConvergence",
            Error::DimensionUnsupported(_) => "DimensionUnsupported",
            Error::OddM(_) => "OddM",
            Error::MTooLarge(_) => "MTooLarge",
            Error::DimensionTooLarge(_) => "DimensionTooLarge",
            Error::NonConvergent(_) => "NonConvergent",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

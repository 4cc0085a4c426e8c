use thiserror::Error;

/// Errors raised by the estimation, testing and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HetError {
    #[error("solver did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("design matrix is rank deficient (rank {rank} < {p})")]
    RankDeficientDesign { rank: usize, p: usize },

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("averaged Hessian is singular at the supplied estimate")]
    SingularHessian,

    #[error("variance for block {block} is not strictly positive ({value})")]
    NonPositiveVariance { block: usize, value: f64 },

    #[error("need at least 2 data blocks, got {0}")]
    KTooSmall(usize),

    #[error("split leaves too few rows for p = {p}: first = {first}, second = {second}")]
    SplitTooSmall { first: usize, second: usize, p: usize },

    #[error("missing or mismatched fit: {0}")]
    MissingFit(String),

    #[error("response value {value} at row {row} is not 0 or 1")]
    NonBinaryResponse { row: usize, value: f64 },

    #[error("block has {n} observations but p = {p} parameters")]
    TooFewObservations { n: usize, p: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("argument out of domain: {0}")]
    Domain(String),
}

impl HetError {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HetError::NonConvergence { .. }
                | HetError::RankDeficientDesign { .. }
                | HetError::SingularHessian
                | HetError::NonPositiveVariance { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, HetError>;

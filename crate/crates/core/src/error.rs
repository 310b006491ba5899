use thiserror::Error;

/// Errors raised while ingesting data, imputing, or fitting.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MbiError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid source spans: {0}")]
    InvalidSpans(String),

    #[error("row {row}: source {source_index} is only partially observed")]
    NonBlockRow { row: usize, source_index: usize },

    #[error("row {row}: response is missing or not finite")]
    MissingResponse { row: usize },

    #[error("column {column} is never observed")]
    UnobservedColumn { column: usize },

    #[error("group {group} has no donor group")]
    EmptyDonor { group: usize },

    #[error("no pooled rows observe column {target} jointly with its predictors")]
    NoDonorRows { target: usize },

    #[error("normal equations are numerically singular (rcond {rcond:.3e})")]
    SingularDesign { rcond: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("trace of the covariance block is not positive")]
    ZeroTrace,

    #[error("group {group}: every principal component was dropped")]
    AllComponentsDropped { group: usize },

    #[error("objective is not finite")]
    NonFiniteObjective,

    #[error("line search failed after {0} backtracks")]
    LineSearchFailed(usize),

    #[error("initialization failed: {0}")]
    InitFailed(String),

    #[error("data have no complete-case group")]
    NoCompleteGroup,

    #[error("V1 is singular after reduction")]
    SingularV1,

    #[error("the complete-case moments do not identify the {active} selected coefficients")]
    UnidentifiedSingle { active: usize },

    #[error("invalid exchangeable correlation {rho} for p = {p}")]
    InvalidRho { rho: f64, p: usize },

    #[error("not implemented: {0}")]
    NotImplemented(String),

    #[error("no converged fit on the lambda grid ({0})")]
    PathFailed(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MbiError {
    fn from(e: std::io::Error) -> Self {
        MbiError::Io(e.to_string())
    }
}

impl From<csv::Error> for MbiError {
    fn from(e: csv::Error) -> Self {
        MbiError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MbiError>;

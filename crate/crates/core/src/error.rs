use alloc::string::String;

use crate::expr::DomainError;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown character {ch:?} at position {pos}")]
    UnknownChar { pos: usize, ch: char },
    #[error("unbound name `{0}`")]
    UnboundName(String),
    #[error("expression references undeclared name `{0}`")]
    UndeclaredName(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("prior covariance is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("expression domain error: {0}")]
    Domain(#[from] DomainError),
    #[error("model undefined at x")]
    ModelUndefined,
    #[error("grid too coarse for noise scale (sigma {sigma}, spacing {spacing})")]
    GridTooCoarse { sigma: f64, spacing: f64 },
    #[error("initial point has zero density")]
    InvalidInit,
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("logdet matrix with {0} rows exceeds the limit; subsample first")]
    MatrixTooLarge(usize),
    #[error("all optimizer starts failed ({starts} starts, last: {last})")]
    OptimizationFailed { starts: usize, last: String },
    #[error("no pending proposal; call propose first")]
    NoPendingProposal,
    #[error("response must be finite, got {0}")]
    NonFiniteResponse(f64),
    #[error("design point outside the box")]
    OutsideBox,
}

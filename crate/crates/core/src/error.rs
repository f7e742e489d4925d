use alloc::boxed::Box;

use thiserror::Error;

use crate::simplex_qp::QpSolution;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite after jitter escalation")]
    NotPositiveDefinite,

    #[error("least-squares system is rank deficient")]
    RankDeficient,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },

    #[error("quadratic term is not positive semidefinite")]
    NotPsd,

    #[error("QP did not reach tolerance after {} iterations (KKT residual {:e})", .0.iterations, .0.kkt_residual)]
    MaxIterExceeded(Box<QpSolution>),

    #[error("argument outside model domain: {0}")]
    Domain(&'static str),

    #[error("pressure equation has no sign change on the temperature window")]
    NoBracket,

    #[error("duplicate inputs at indices {0} and {1}")]
    DuplicateInput(usize, usize),

    #[error("trajectory time grids differ")]
    GridMismatch,
}

impl Error {
    pub(crate) fn dims(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }

    pub(crate) fn param(name: &'static str, reason: &'static str) -> Self {
        Error::InvalidParameter { name, reason }
    }
}

//! Error type shared across the crate.
//!
//! Variants split into two families: configuration problems (bad parameters,
//! malformed files, shape mismatches) and numerical-precondition failures
//! (a matrix that is not stochastic, a chain that is not reversible, a series
//! that does not converge). The CLI maps the former to exit code 1 and the
//! latter to exit code 2 via [`Error::exit_code`].

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no state with id `{0}`")]
    UnknownState(String),

    #[error("state space has {size} states, exceeding the supported cap of {cap}")]
    SpaceTooLarge { size: usize, cap: usize },

    #[error("{kind} requires state embeddings on a regular 1-D or 2-D grid: {reason}")]
    GridRequired { kind: &'static str, reason: String },

    #[error("support enumeration is unavailable: {0}")]
    SupportUnavailable(String),

    #[error("support enumeration produced {atoms} atoms, exceeding the cap of {cap}")]
    SupportTooLarge { atoms: usize, cap: usize },

    #[error("k = {k} exceeds the number of samples ({n})")]
    BadNeighborCount { k: usize, n: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("row {row} of a stochastic matrix sums to {sum} (expected 1)")]
    NotStochastic { row: usize, sum: f64 },

    #[error("negative matrix entry {value:e} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error(
        "augmentation {index} is not reversible for the given reference \
         distribution: |pi0(u) A(u,v) - pi0(v) A(v,u)| = {deviation:e} at \
         (u, v) = ({u}, {v})"
    )]
    NotReversible {
        index: usize,
        u: usize,
        v: usize,
        deviation: f64,
    },

    #[error(
        "kernel factorization does not reproduce the stationary distribution \
         (max deviation {deviation:e}); use a uniform or per-label-constant \
         reference distribution"
    )]
    FactorizationMismatch { deviation: f64 },

    #[error(
        "the chain cannot reach {unreachable} of {total} states from the \
         dataset; add augmentation edges or anchor points"
    )]
    NotSurjective { unreachable: usize, total: usize },

    #[error(
        "augmentation {index} moves probability {probability} from state {u} \
         to state {v}, which carry different labels"
    )]
    LabelCrossing {
        index: usize,
        u: usize,
        v: usize,
        probability: f64,
    },

    #[error("matrix is not symmetric: max |M - M^T| = {deviation:e}")]
    NotSymmetric { deviation: f64 },

    #[error("matrix is not positive definite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("per-label kernel blocks differ by {deviation:e}; labels do not share a common input-level kernel")]
    LabelBlocksDiffer { deviation: f64 },

    #[error(
        "update series diverges: spectral radius {spectral_radius} >= 1; \
         recompute the kernel directly instead"
    )]
    SeriesDiverges { spectral_radius: f64 },

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("objective diverged at iteration {iteration} (value {value:e}); reduce the step size")]
    Diverged { iteration: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI: 1 for configuration errors, 2 for
    /// numerical-precondition failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::DimensionMismatch(_)
            | Error::UnknownState(_)
            | Error::SpaceTooLarge { .. }
            | Error::GridRequired { .. }
            | Error::SupportUnavailable(_)
            | Error::SupportTooLarge { .. }
            | Error::BadNeighborCount { .. }
            | Error::Config { .. }
            | Error::Io(_)
            | Error::Json(_) => 1,
            Error::NotStochastic { .. }
            | Error::NegativeEntry { .. }
            | Error::InvalidDistribution(_)
            | Error::NotReversible { .. }
            | Error::FactorizationMismatch { .. }
            | Error::NotSurjective { .. }
            | Error::LabelCrossing { .. }
            | Error::NotSymmetric { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::LabelBlocksDiffer { .. }
            | Error::SeriesDiverges { .. }
            | Error::SolveFailed(_)
            | Error::DegenerateFit(_)
            | Error::Diverged { .. } => 2,
        }
    }
}

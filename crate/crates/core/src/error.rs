//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by channel construction, MDP operations, solvers,
/// trainers, and simulators.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An observation with zero marginal probability was supplied to a
    /// belief update.
    #[error("impossible observation: output {y} has zero probability under the current belief/action")]
    ImpossibleObservation { y: usize },

    /// Tensor shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The duality MDP reward would be infinite: the channel places
    /// mass on an output the test distribution assigns zero to.
    #[error("infinite KL reward at (s={s}, q={q}, x={x}): channel output {y} has positive probability but T(y|q)=0")]
    InfiniteKl { s: usize, q: usize, x: usize, y: usize },

    /// An iterative solver hit its iteration cap without converging.
    #[error("no convergence after {iterations} iterations ({what})")]
    NoConvergence { what: String, iterations: usize },

    /// A zero-error decoder disagreed with the transmitted stream.
    #[error("decode mismatch: {0}")]
    DecodeMismatch(String),

    /// Two routes to the same quantity disagreed beyond tolerance.
    #[error("internal inconsistency: {0}")]
    Internal(String),

    /// I/O failure while loading or storing an artifact.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Malformed JSON artifact.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

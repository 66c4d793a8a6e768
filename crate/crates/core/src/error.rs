use alloc::string::String;
use alloc::vec::Vec;
use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A state left the finite range or exceeded the divergence guard.
    #[error("trajectory diverged at t = {time}")]
    Divergence { time: f64 },

    /// A field returned NaN or an infinity.
    #[error("non-finite field value at t = {time}, x = {point:?}")]
    NonFinite { time: f64, point: Vec<f64> },

    /// An argument or input violated the operation's precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The enlarged domain fails one of the structural assumptions.
    #[error("enlargement infeasible: assumption A{assumption} violated at {witness:?} ({detail})")]
    EnlargementInfeasible {
        assumption: u8,
        witness: Vec<f64>,
        detail: String,
    },

    /// The diffusion matrix σσ* is not positive definite at a probe point.
    #[error("singular diffusion metric at {point:?}")]
    SingularMetric { point: Vec<f64> },

    /// The operation is not implemented for this domain kind or dimension.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A Kramers fit was requested over summaries with censored means.
    #[error("censored mean exit time at eps = {0:?}")]
    CensoredMeans(Vec<f64>),

    /// Two series that must share a time grid do not.
    #[error("time grid mismatch: {0}")]
    GridMismatch(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}

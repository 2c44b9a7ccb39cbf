use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures of the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid network state: {0}")]
    InvalidState(String),

    #[error("user index {index} out of range for {users} users")]
    UserIndex { index: usize, users: usize },

    #[error("zero receiver for user {0}")]
    ZeroReceiver(usize),

    #[error("inactive user {0} has no receiver")]
    InactiveUser(usize),

    #[error("utility undefined at zero power")]
    ZeroPowerUtility,

    #[error("degenerate SINR for user {0}")]
    DegenerateSinr(usize),

    #[error("code update undefined: receiver has no component in the spectrum")]
    CodeUpdateUndefined,

    #[error("infeasible load: alpha = {alpha} must be below {limit}")]
    InfeasibleLoad { alpha: f64, limit: f64 },

    #[error("target unreachable: {0}")]
    TargetUnreachable(String),

    #[error("no root bracketed: {0}")]
    NoRoot(String),

    #[error("SINR fixed point for sorted user {index} did not converge")]
    ProfileNonConvergence { index: usize },

    #[error("outside supported scope: {0}")]
    OutsideScope(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("quantile level {0} outside [0, 1)")]
    QuantileLevel(f64),

    #[error("{0}")]
    Io(String),
}

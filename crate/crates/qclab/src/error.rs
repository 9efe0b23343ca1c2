use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument violated its documented domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Run-configuration file failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// An iterate left the finite range; the run is aborted rather than clamped.
    #[error("iterate became non-finite at iteration {iter}")]
    Diverged { iter: usize },

    /// The running moment estimate was still drifting between the last two
    /// doubling checkpoints; the declared moment order is too close to (or
    /// beyond) the tail index of the noise.
    #[error("sigma_q calibration did not converge: {0}")]
    CalibrationNonConvergence(String),

    /// Bisection interval does not bracket a root.
    #[error("no sign change of the expected update on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },

    /// Quantile of an empty sample requested.
    #[error("empty sample")]
    EmptySample,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Differentially private QC-SGD: per-sample clipping over a mini-batch plus
//! one Gaussian vector per iteration whose scale tracks the current
//! threshold.
//!
//! Only the noise-calibration formula is implemented here; there is no
//! privacy accountant, so `sigma_dp` shapes the noise but does not certify a
//! privacy guarantee.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{run_loop, OptimizerConfig};
use crate::problems::StochasticProblem;
use crate::rng::RngStream;
use crate::trace::RunTrace;

pub const DEFAULT_CALIBRATION_C: f64 = 2.0;

/// DP run parameters. `sigma_dp` is derived as
/// `C * sqrt(T * ln(1/delta)) / epsilon` (natural log) unless overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub batch_size: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Horizon T entering the calibration formula.
    pub horizon: usize,
    #[serde(default = "default_c")]
    pub calibration_c: f64,
    #[serde(default)]
    pub override_sigma_dp: Option<f64>,
}

fn default_c() -> f64 {
    DEFAULT_CALIBRATION_C
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if let Some(s) = self.override_sigma_dp {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid("override_sigma_dp", "must be finite and >= 0"));
            }
            return Ok(());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be > 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", format!("must lie in (0,1), got {}", self.delta)));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if !(self.calibration_c.is_finite() && self.calibration_c >= 0.0) {
            return Err(Error::invalid("calibration_c", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// The operative noise multiplier.
    pub fn sigma_dp(&self) -> f64 {
        match self.override_sigma_dp {
            Some(s) => s,
            None => sigma_dp(self.epsilon, self.delta, self.horizon, self.calibration_c)
                .expect("validated config"),
        }
    }
}

/// `C * sqrt(T * ln(1/delta)) / epsilon`.
pub fn sigma_dp(epsilon: f64, delta: f64, horizon: usize, c: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid("epsilon", format!("must be > 0, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("must lie in (0,1), got {delta}")));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::invalid("c", format!("must be >= 0, got {c}")));
    }
    Ok(c * (horizon as f64 * (1.0 / delta).ln()).sqrt() / epsilon)
}

/// The batch-plus-noise factor `1/B + sigma_dp^2`.
pub fn big_s(batch_size: usize, sigma_dp: f64) -> f64 {
    1.0 / batch_size as f64 + sigma_dp * sigma_dp
}

/// Largest admissible step size under DP:
/// `(p - beta/2 - c) / (2 L S)` with `S = 1/B + sigma_dp^2`.
pub fn dp_max_step_size(p: f64, beta: f64, c: f64, smoothness: f64, big_s: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0,1), got {p}")));
    }
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::invalid("beta", format!("must lie in (0,1), got {beta}")));
    }
    if !(0.0 < c && c < 1.0) {
        return Err(Error::invalid("c", format!("must lie in (0,1), got {c}")));
    }
    if !(smoothness.is_finite() && smoothness > 0.0) {
        return Err(Error::invalid("smoothness", "must be > 0"));
    }
    if !(big_s.is_finite() && big_s > 0.0) {
        return Err(Error::invalid("big_s", "must be > 0"));
    }
    if beta / 2.0 + c >= p {
        return Err(Error::invalid(
            "beta",
            format!("beta/2 + c = {} must be strictly below p = {p}", beta / 2.0 + c),
        ));
    }
    Ok((p - beta / 2.0 - c) / (2.0 * smoothness * big_s))
}

/// Run DP-QC-SGD: per iteration, clip each of the `B` per-sample gradients
/// with the shared threshold, average, and add one Gaussian vector with
/// per-coordinate standard deviation `tau(x^t) * sigma_dp`.
pub fn run_dp_qc_sgd(
    problem: &dyn StochasticProblem,
    config: &OptimizerConfig,
    dp: &DpConfig,
) -> Result<RunTrace> {
    run_loop(problem, config, Some(dp))
}

/// Sample one DP noise vector (per-coordinate std `scale`). This is the same
/// primitive the run loop applies; exposed for the variance checks.
pub fn dp_noise_into(out: &mut [f64], scale: f64, rng: &mut RngStream) {
    use rand_distr::{Distribution, StandardNormal};
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = scale * z;
    }
}

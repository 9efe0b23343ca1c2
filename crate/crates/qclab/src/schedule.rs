//! Step-size and quantile schedules.
//!
//! Power laws are evaluated at `t + 1` so the first iteration is well
//! defined; the leading constants (`gamma0`, `p0`) are configuration, and the
//! polylogarithmic factors hidden in the asymptotic schedule statements are
//! deliberately omitted: pure power laws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_H_MIN: f64 = 1e-4;

/// Step-size schedule: constant, or `gamma0 * (t+1)^(theta-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { gamma0: f64 },
    Polynomial { gamma0: f64, theta: f64 },
}

impl StepSchedule {
    pub fn constant(gamma0: f64) -> Result<Self> {
        let s = StepSchedule::Constant { gamma0 };
        s.validate()?;
        Ok(s)
    }

    pub fn polynomial(gamma0: f64, theta: f64) -> Result<Self> {
        let s = StepSchedule::Polynomial { gamma0, theta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (gamma0, theta) = match *self {
            StepSchedule::Constant { gamma0 } => (gamma0, 1.0),
            StepSchedule::Polynomial { gamma0, theta } => (gamma0, theta),
        };
        if !(gamma0.is_finite() && gamma0 > 0.0) {
            return Err(Error::invalid("gamma0", format!("must be finite and > 0, got {gamma0}")));
        }
        if !theta.is_finite() {
            return Err(Error::invalid("theta", "must be finite"));
        }
        Ok(())
    }

    /// γ_t. Always finite and positive for t ≥ 0.
    pub fn step_at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { gamma0 } => gamma0,
            StepSchedule::Polynomial { gamma0, theta } => {
                gamma0 * ((t + 1) as f64).powf(theta - 1.0)
            }
        }
    }
}

/// Quantile schedule: constant `p0`, or `p_t = 1 - h_t` with
/// `h_t = max(h_min, (1-p0) * (t+1)^nu)`.
///
/// The `h_min` floor keeps `p_t` strictly below 1 so the empirical quantile
/// estimator never degenerates to the maximum order statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuantileSchedule {
    Constant {
        p0: f64,
    },
    Polynomial {
        p0: f64,
        nu: f64,
        #[serde(default = "default_h_min")]
        h_min: f64,
    },
}

fn default_h_min() -> f64 {
    DEFAULT_H_MIN
}

impl QuantileSchedule {
    pub fn constant(p0: f64) -> Result<Self> {
        let s = QuantileSchedule::Constant { p0 };
        s.validate()?;
        Ok(s)
    }

    pub fn polynomial(p0: f64, nu: f64, h_min: f64) -> Result<Self> {
        let s = QuantileSchedule::Polynomial { p0, nu, h_min };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            QuantileSchedule::Constant { p0 } => {
                if !(p0.is_finite() && 0.0 < p0 && p0 < 1.0) {
                    return Err(Error::invalid("p0", format!("must lie in (0,1), got {p0}")));
                }
            }
            QuantileSchedule::Polynomial { p0, nu, h_min } => {
                if !(p0.is_finite() && 0.0 < p0 && p0 < 1.0) {
                    return Err(Error::invalid("p0", format!("must lie in (0,1), got {p0}")));
                }
                if !nu.is_finite() {
                    return Err(Error::invalid("nu", "must be finite"));
                }
                if !(h_min.is_finite() && 0.0 < h_min && h_min < 1.0) {
                    return Err(Error::invalid("h_min", format!("must lie in (0,1), got {h_min}")));
                }
            }
        }
        Ok(())
    }

    /// p_t ∈ (0, 1).
    pub fn quantile_at(&self, t: usize) -> f64 {
        match *self {
            QuantileSchedule::Constant { p0 } => p0,
            QuantileSchedule::Polynomial { p0, nu, h_min } => {
                let h = ((1.0 - p0) * ((t + 1) as f64).powf(nu)).max(h_min);
                // h can exceed 1-p0 only for nu > 0; cap so p_t stays positive.
                1.0 - h.min(1.0 - f64::MIN_POSITIVE).min(0.999_999)
            }
        }
    }
}

/// The jointly optimal schedule exponents for moment order `q ∈ (1, 2]`:
/// `theta = (1 - 1/q) / (2 - 1/q)` for the step law `γ_t ∝ t^(theta-1)` and
/// `nu = -1 / (4 - 2/q)` for the clipped-mass law `h_t ∝ t^nu`.
pub fn schedule_exponents(q: f64) -> Result<(f64, f64)> {
    if !(q.is_finite() && 1.0 < q && q <= 2.0) {
        return Err(Error::invalid("q", format!("must lie in (1,2], got {q}")));
    }
    let qi = 1.0 / q;
    let theta = (1.0 - qi) / (2.0 - qi);
    let nu = -1.0 / (4.0 - 2.0 * qi);
    Ok((theta, nu))
}

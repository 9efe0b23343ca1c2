//! Evaluators for the convergence bounds, the per-step recursion check, and
//! the brute-force fixed-point oracle for the two-atom bias example.

use crate::clipping::{clip_coefficient, estimate_threshold, exact_quantile_two_point};
use crate::error::{Error, Result};
use crate::privacy::big_s;
use crate::problems::{StochasticProblem, TwoPointExample};
use crate::rng::RngStream;
use crate::schedule::{QuantileSchedule, StepSchedule};
use crate::trace::RunTrace;
use crate::vector::{l2_norm, l2_norm_sq};

/// Constants feeding the bound evaluators.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs {
    /// F0 = f(x^0) - f_inf.
    pub f0: f64,
    pub smoothness: f64,
    pub sigma_q: f64,
    pub q: f64,
    pub beta: f64,
    pub c: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.f0.is_finite() && self.f0 >= 0.0) {
            return Err(Error::invalid("f0", "must be finite and >= 0"));
        }
        if !(self.smoothness.is_finite() && self.smoothness > 0.0) {
            return Err(Error::invalid("smoothness", "must be > 0"));
        }
        if !(self.sigma_q.is_finite() && self.sigma_q >= 0.0) {
            return Err(Error::invalid("sigma_q", "must be >= 0"));
        }
        if !(1.0 < self.q && self.q <= 2.0) {
            return Err(Error::invalid("q", format!("must lie in (1,2], got {}", self.q)));
        }
        if !(0.0 < self.beta && self.beta < 1.0) {
            return Err(Error::invalid("beta", "must lie in (0,1)"));
        }
        if !(0.0 < self.c && self.c < 1.0) {
            return Err(Error::invalid("c", "must lie in (0,1)"));
        }
        Ok(())
    }
}

/// General convergence bound with per-iteration step sizes and quantiles:
/// `2 F0 / Gamma_T + (sigma_q^2 / Gamma_T) * sum_t gamma_t h_t^(-2/q)
/// (2 L gamma_t + h_t^2 / beta)`.
///
/// Rejects schedules whose step sizes violate
/// `gamma_t <= (2 p_t - beta - c) / (2L)` at any iteration.
pub fn rhs_theorem1(
    inputs: &BoundInputs,
    steps: &StepSchedule,
    quantiles: &QuantileSchedule,
    t_total: usize,
) -> Result<f64> {
    inputs.validate()?;
    if t_total == 0 {
        return Err(Error::invalid("t_total", "must be at least 1"));
    }
    let mut gamma_sum = 0.0;
    let mut noise_sum = 0.0;
    for t in 0..t_total {
        let gamma = steps.step_at(t);
        let p = quantiles.quantile_at(t);
        let h = 1.0 - p;
        let cap = (2.0 * p - inputs.beta - inputs.c) / (2.0 * inputs.smoothness);
        if gamma > cap {
            return Err(Error::invalid(
                "steps",
                format!("gamma_{t} = {gamma} exceeds the step bound {cap} at p_{t} = {p}"),
            ));
        }
        gamma_sum += gamma;
        noise_sum += gamma
            * h.powf(-2.0 / inputs.q)
            * (2.0 * inputs.smoothness * gamma + h * h / inputs.beta);
    }
    Ok(2.0 * inputs.f0 / gamma_sum + inputs.sigma_q * inputs.sigma_q * noise_sum / gamma_sum)
}

/// The three terms of the constant-parameter bound.
#[derive(Debug, Clone, Copy)]
pub struct Corollary1Bound {
    /// 2 F0 / (gamma T)
    pub term1: f64,
    /// 2 gamma L sigma_q^2 h^(-2/q)
    pub term2: f64,
    /// sigma_q^2 h^(2-2/q) / beta — the irreducible part
    pub term3: f64,
    pub total: f64,
}

/// Constant step size and quantile:
/// `2F0/(gamma T) + 2 gamma L sigma_q^2 h^(-2/q) + sigma_q^2 h^(2-2/q)/beta`.
pub fn rhs_corollary1(
    inputs: &BoundInputs,
    gamma: f64,
    p: f64,
    t_total: usize,
) -> Result<Corollary1Bound> {
    inputs.validate()?;
    if t_total == 0 {
        return Err(Error::invalid("t_total", "must be at least 1"));
    }
    if !(0.0 < p && p < 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0,1), got {p}")));
    }
    let cap = (2.0 * p - inputs.beta - inputs.c) / (2.0 * inputs.smoothness);
    if !(gamma > 0.0 && gamma <= cap) {
        return Err(Error::invalid(
            "gamma",
            format!("must lie in (0, {cap}] for p={p}, got {gamma}"),
        ));
    }
    let h = 1.0 - p;
    let s2 = inputs.sigma_q * inputs.sigma_q;
    let term1 = 2.0 * inputs.f0 / (gamma * t_total as f64);
    let term2 = 2.0 * gamma * inputs.smoothness * s2 * h.powf(-2.0 / inputs.q);
    let term3 = s2 * h.powf(2.0 - 2.0 / inputs.q) / inputs.beta;
    Ok(Corollary1Bound { term1, term2, term3, total: term1 + term2 + term3 })
}

/// DP bound with the batch-plus-noise factor `S = 1/B + sigma_dp^2`:
/// `F0/Gamma_T + (sigma_q^2/Gamma_T) sum_t gamma_t h^(-2/q)
/// (2 gamma_t L S + h^2/(2 beta))`.
pub fn rhs_theorem2(
    inputs: &BoundInputs,
    steps: &StepSchedule,
    p: f64,
    t_total: usize,
    batch_size: usize,
    sigma_dp: f64,
) -> Result<f64> {
    inputs.validate()?;
    if t_total == 0 {
        return Err(Error::invalid("t_total", "must be at least 1"));
    }
    if !(0.0 < p && p < 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0,1), got {p}")));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be at least 1"));
    }
    if !(sigma_dp.is_finite() && sigma_dp >= 0.0) {
        return Err(Error::invalid("sigma_dp", "must be >= 0"));
    }
    let s_factor = big_s(batch_size, sigma_dp);
    let cap = (p - inputs.beta / 2.0 - inputs.c) / (2.0 * inputs.smoothness * s_factor);
    let h = 1.0 - p;
    let mut gamma_sum = 0.0;
    let mut noise_sum = 0.0;
    for t in 0..t_total {
        let gamma = steps.step_at(t);
        if gamma > cap {
            return Err(Error::invalid(
                "steps",
                format!("gamma_{t} = {gamma} exceeds the DP step bound {cap}"),
            ));
        }
        gamma_sum += gamma;
        noise_sum += gamma
            * h.powf(-2.0 / inputs.q)
            * (2.0 * gamma * inputs.smoothness * s_factor + h * h / (2.0 * inputs.beta));
    }
    Ok(inputs.f0 / gamma_sum + inputs.sigma_q * inputs.sigma_q * noise_sum / gamma_sum)
}

/// Order-constant-free comparator for SGD with a fixed clipping threshold:
/// `(F0/(gamma T tau))^2 + F0/(gamma T) + gamma L sigma^2
/// + min(sigma^2, sigma^4/tau^2)`.
pub fn rhs_fixed_clipping(f0: f64, gamma: f64, t_total: usize, tau: f64, l: f64, sigma: f64) -> f64 {
    let gt = gamma * t_total as f64;
    let first = (f0 / (gt * tau)).powi(2);
    let last = if sigma == 0.0 { 0.0 } else { (sigma * sigma).min(sigma.powi(4) / (tau * tau)) };
    first + f0 / gt + gamma * l * sigma * sigma + last
}

/// Result of one recursion check.
#[derive(Debug, Clone, Copy)]
pub struct Lemma2Check {
    pub lhs: f64,
    pub rhs: f64,
    /// rhs - lhs; the inequality predicts margin >= 0 up to MC error.
    pub margin: f64,
    /// Statistical error of the margin (MC error of lhs plus the alpha_bar
    /// term propagated into rhs).
    pub stderr: f64,
    pub alpha_bar: f64,
}

/// Monte-Carlo check of the per-step recursion: `n_mc` single QC-SGD steps
/// from `x` estimate `E[f(x^{t+1}) | x^t = x]`, compared against
/// `f(x) - gamma (alpha_bar - beta/2 - gamma L) ||grad f||^2
///  + gamma h^(2-2/q) sigma_q^2 / (2 beta) + gamma^2 L sigma_q^2 h^(-2/q)`.
pub fn lemma2_check(
    problem: &dyn StochasticProblem,
    x: &[f64],
    gamma: f64,
    p: f64,
    beta: f64,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<Lemma2Check> {
    if n_mc < 100_000 {
        return Err(Error::invalid("n_mc", "need at least 10^5 Monte Carlo steps"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", "must be > 0"));
    }
    if !(0.0 < beta && beta < 1.0) {
        return Err(Error::invalid("beta", "must lie in (0,1)"));
    }
    let sigma_q = problem
        .sigma_q()
        .ok_or_else(|| Error::invalid("sigma_q", "problem requires calibration first"))?;
    let q = problem.moment_order();
    let l = problem.smoothness();
    // The analysis treats tau(x) as the exact quantile; use the closed form
    // when the problem has one and a large-sample surrogate otherwise.
    let tau = match problem.exact_norm_quantile(x, p) {
        Some(t) => t,
        None => estimate_threshold(problem, x, p, 8192, rng)?.tau,
    };
    let d = problem.dim();
    let grad = problem.grad_exact(x);
    let grad_sq = l2_norm_sq(&grad);
    let fx = problem.eval_f(x);

    let mut sample = vec![0.0; d];
    let mut stepped = vec![0.0; d];
    let mut sum_f = 0.0;
    let mut sum_f_sq = 0.0;
    let mut sum_alpha = 0.0;
    let mut sum_alpha_sq = 0.0;
    for _ in 0..n_mc {
        problem.grad_sample_into(x, &mut sample, rng);
        let alpha = clip_coefficient(l2_norm(&sample), tau);
        for i in 0..d {
            stepped[i] = x[i] - gamma * alpha * sample[i];
        }
        let fv = problem.eval_f(&stepped);
        sum_f += fv;
        sum_f_sq += fv * fv;
        sum_alpha += alpha;
        sum_alpha_sq += alpha * alpha;
    }
    let n = n_mc as f64;
    let lhs = sum_f / n;
    let f_var = (sum_f_sq / n - lhs * lhs).max(0.0);
    let alpha_bar = sum_alpha / n;
    let alpha_var = (sum_alpha_sq / n - alpha_bar * alpha_bar).max(0.0);

    let h = 1.0 - p;
    let s2 = sigma_q * sigma_q;
    let rhs = fx - gamma * (alpha_bar - beta / 2.0 - gamma * l) * grad_sq
        + 0.5 * gamma * h.powf(2.0 - 2.0 / q) * s2 / beta
        + gamma * gamma * l * s2 * h.powf(-2.0 / q);
    let stderr =
        (f_var / n).sqrt() + gamma * grad_sq * (alpha_var / n).sqrt();
    Ok(Lemma2Check { lhs, rhs, margin: rhs - lhs, stderr, alpha_bar })
}

/// Exact expected clipped update on the two-atom example, by enumeration of
/// both outcomes under the discrete-quantile threshold.
pub fn expected_update_two_point(x: f64, problem: &TwoPointExample, p: f64) -> f64 {
    let tau = exact_quantile_two_point(x, problem, p);
    let [(g1, w1), (g2, w2)] = problem.atoms(x);
    let a1 = clip_coefficient(g1.abs(), tau);
    let a2 = clip_coefficient(g2.abs(), tau);
    w1 * a1 * g1 + w2 * a2 * g2
}

/// Root of the expected clipped update by bisection, to absolute tolerance
/// 1e-10 on the argument. The default interval for this family is
/// `(-50, -1e-6)`.
pub fn fixed_point_two_point(
    problem: &TwoPointExample,
    p: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    const TOL: f64 = 1e-10;
    let mut lo = lo;
    let mut hi = hi;
    let mut flo = expected_update_two_point(lo, problem, p);
    let fhi = expected_update_two_point(hi, problem, p);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoSignChange { lo, hi });
    }
    while hi - lo > TOL {
        let mid = 0.5 * (lo + hi);
        let fmid = expected_update_two_point(mid, problem, p);
        if fmid == 0.0 {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The closed-form fixed point `-omega / (1 - omega)` of the normalized
/// estimator (clipped branch equal to 1).
pub fn paper_fixed_point(omega: f64) -> Result<f64> {
    if !(omega.is_finite() && 0.5 < omega && omega < 1.0) {
        return Err(Error::invalid("omega", format!("must lie in (1/2,1), got {omega}")));
    }
    Ok(-omega / (1.0 - omega))
}

/// `(c / Gamma_T) * sum_t gamma_t ||grad f(x^t)||^2` from a completed trace.
pub fn stationarity_measure(trace: &RunTrace, c: f64) -> f64 {
    trace.stationarity(c)
}

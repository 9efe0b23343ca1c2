//! Clip coefficient, quantile thresholds, and the closed-form threshold/bias
//! bounds they satisfy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{StochasticProblem, TwoPointExample};
use crate::rng::RngStream;
use crate::schedule::QuantileSchedule;
use crate::vector::l2_norm;

pub const DEFAULT_THRESHOLD_SAMPLES: usize = 512;

/// How the clipping threshold is produced each iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClipConfig {
    /// No clipping; the coefficient is identically 1.
    None,
    /// Fixed threshold: recovers constant-clipped SGD.
    Constant { tau: f64 },
    /// Threshold is the p_t-quantile of the gradient-norm distribution at the
    /// current iterate, estimated from `m` fresh samples (or computed exactly
    /// when the problem supports it and `exact` is set).
    Quantile {
        schedule: QuantileSchedule,
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default)]
        exact: bool,
    },
}

fn default_m() -> usize {
    DEFAULT_THRESHOLD_SAMPLES
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ClipConfig::None => Ok(()),
            ClipConfig::Constant { tau } => {
                if !(tau.is_finite() && *tau > 0.0) {
                    return Err(Error::invalid("tau", format!("must be finite and > 0, got {tau}")));
                }
                Ok(())
            }
            ClipConfig::Quantile { schedule, m, .. } => {
                schedule.validate()?;
                if *m < 2 {
                    return Err(Error::invalid("m", format!("need at least 2 samples, got {m}")));
                }
                Ok(())
            }
        }
    }
}

/// A realized threshold together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub tau: f64,
    pub p: f64,
    pub source: ThresholdSource,
    pub m_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    ExactDiscrete,
    EmpiricalOrderStatistic,
    Constant,
}

/// `min(1, tau / grad_norm)` with the zero-norm convention: the zero vector
/// is invariant under any coefficient, so the limit value 1 is used.
pub fn clip_coefficient(grad_norm: f64, tau: f64) -> f64 {
    debug_assert!(grad_norm >= 0.0 && tau >= 0.0);
    if grad_norm <= tau {
        1.0
    } else {
        tau / grad_norm
    }
}

/// k-th smallest with `k = max(1, ceil(p * m))`. Ties are by value, so the
/// result is deterministic for any input order.
pub fn empirical_quantile(norms: &[f64], p: f64) -> Result<f64> {
    if norms.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(p.is_finite() && 0.0 < p && p < 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0,1), got {p}")));
    }
    let m = norms.len();
    let k = ((p * m as f64).ceil() as usize).max(1).min(m);
    let mut buf = norms.to_vec();
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    Ok(*kth)
}

/// In-place variant used by the run loop; `buf` is scratch and is reordered.
pub(crate) fn empirical_quantile_in_place(buf: &mut [f64], p: f64) -> f64 {
    let m = buf.len();
    let k = ((p * m as f64).ceil() as usize).max(1).min(m);
    let (_, kth, _) = buf.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
    *kth
}

/// Exact quantile of the two-atom gradient-norm distribution at `x`:
/// the smallest atom value whose cumulative probability reaches `p`.
pub fn exact_quantile_two_point(x: f64, problem: &TwoPointExample, p: f64) -> f64 {
    let [(g1, w1), (g2, w2)] = problem.atoms(x);
    let mut atoms = [(g1.abs(), w1), (g2.abs(), w2)];
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    if atoms[0].1 >= p || atoms[0].0 == atoms[1].0 {
        atoms[0].0
    } else {
        debug_assert!(atoms[0].1 + atoms[1].1 >= p);
        atoms[1].0
    }
}

/// Draw `m` fresh stochastic gradients at `x` and return the empirical
/// `p`-quantile of their norms (exact when the problem provides one and
/// `exact` is requested).
pub fn estimate_threshold(
    problem: &dyn StochasticProblem,
    x: &[f64],
    p: f64,
    m: usize,
    rng: &mut RngStream,
) -> Result<ThresholdEstimate> {
    if m < 2 {
        return Err(Error::invalid("m", format!("need at least 2 samples, got {m}")));
    }
    if !(p.is_finite() && 0.0 < p && p < 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0,1), got {p}")));
    }
    let mut grad = vec![0.0; problem.dim()];
    let mut norms = Vec::with_capacity(m);
    for _ in 0..m {
        problem.grad_sample_into(x, &mut grad, rng);
        norms.push(l2_norm(&grad));
    }
    let tau = empirical_quantile_in_place(&mut norms, p);
    Ok(ThresholdEstimate { tau, p, source: ThresholdSource::EmpiricalOrderStatistic, m_used: m })
}

/// Exact threshold when the problem has a closed-form norm distribution.
pub fn exact_threshold(
    problem: &dyn StochasticProblem,
    x: &[f64],
    p: f64,
) -> Result<ThresholdEstimate> {
    let tau = problem.exact_norm_quantile(x, p).ok_or_else(|| {
        Error::invalid("exact", "problem has no closed-form gradient-norm quantile")
    })?;
    Ok(ThresholdEstimate { tau, p, source: ThresholdSource::ExactDiscrete, m_used: 0 })
}

/// Upper bound on the p-quantile threshold:
/// `||grad f(x)|| + sigma_q (1-p)^(-1/q)`.
pub fn tau_upper_bound(grad_norm: f64, sigma_q: f64, p: f64, q: f64) -> f64 {
    grad_norm + sigma_q * (1.0 - p).powf(-1.0 / q)
}

/// Upper bound on the clipping bias `||E[alpha g] - alpha_bar grad f||`:
/// `sigma_q (1-p)^(1-1/q)`.
pub fn bias_upper_bound(sigma_q: f64, p: f64, q: f64) -> f64 {
    sigma_q * (1.0 - p).powf(1.0 - 1.0 / q)
}

/// Monte-Carlo estimate of the clipping bias and of the mean clip
/// coefficient at `x`, under the exact threshold when available and an
/// m-sample empirical threshold otherwise.
#[derive(Debug, Clone)]
pub struct BiasEstimate {
    pub bias_norm: f64,
    pub alpha_bar: f64,
    /// Standard error of `bias_norm` (vector-mean error propagated through
    /// the norm, plus the alpha_bar term).
    pub bias_stderr: f64,
    pub alpha_stderr: f64,
    pub tau: f64,
}

pub fn empirical_bias(
    problem: &dyn StochasticProblem,
    x: &[f64],
    p: f64,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<BiasEstimate> {
    if n_samples < 10_000 {
        return Err(Error::invalid("n_samples", "need at least 10^4 samples"));
    }
    let tau = match problem.exact_norm_quantile(x, p) {
        Some(t) => t,
        None => estimate_threshold(problem, x, p, DEFAULT_THRESHOLD_SAMPLES, rng)?.tau,
    };
    let d = problem.dim();
    let grad = problem.grad_exact(x);
    let mut sample = vec![0.0; d];
    let mut mean_clipped = vec![0.0; d];
    let mut m2_clipped = vec![0.0; d]; // sum of squares for per-coordinate variance
    let mut sum_alpha = 0.0;
    let mut sum_alpha_sq = 0.0;
    let n = n_samples as f64;
    for _ in 0..n_samples {
        problem.grad_sample_into(x, &mut sample, rng);
        let alpha = clip_coefficient(l2_norm(&sample), tau);
        sum_alpha += alpha;
        sum_alpha_sq += alpha * alpha;
        for i in 0..d {
            let v = alpha * sample[i];
            mean_clipped[i] += v;
            m2_clipped[i] += v * v;
        }
    }
    let alpha_bar = sum_alpha / n;
    let alpha_var = (sum_alpha_sq / n - alpha_bar * alpha_bar).max(0.0);
    let alpha_stderr = (alpha_var / n).sqrt();
    let mut bias_vec = vec![0.0; d];
    let mut var_trace = 0.0;
    for i in 0..d {
        mean_clipped[i] /= n;
        let var_i = (m2_clipped[i] / n - mean_clipped[i] * mean_clipped[i]).max(0.0);
        var_trace += var_i;
        bias_vec[i] = mean_clipped[i] - alpha_bar * grad[i];
    }
    let bias_norm = l2_norm(&bias_vec);
    let bias_stderr = (var_trace / n).sqrt() + grad.norm() * alpha_stderr;
    Ok(BiasEstimate { bias_norm, alpha_bar, bias_stderr, alpha_stderr, tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{NoiseModel, QuadraticProblem};
    use crate::rng::StreamId;
    use crate::vector::l2_norm;
    use proptest::prelude::*;

    #[test]
    fn clip_coefficient_conventions() {
        assert_eq!(clip_coefficient(2.0, 1.0), 0.5);
        assert_eq!(clip_coefficient(0.5, 1.0), 1.0);
        assert_eq!(clip_coefficient(0.0, 0.0), 1.0);
        assert_eq!(clip_coefficient(0.0, 5.0), 1.0);
        assert_eq!(clip_coefficient(3.0, 0.0), 0.0);
    }

    #[test]
    fn quantile_order_statistics() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(empirical_quantile(&xs, 0.5).unwrap(), 3.0);
        assert_eq!(empirical_quantile(&xs, 0.9).unwrap(), 5.0);
        assert_eq!(empirical_quantile(&[7.0], 0.3).unwrap(), 7.0);
        assert_eq!(empirical_quantile(&[7.0], 0.99).unwrap(), 7.0);
        assert!(empirical_quantile(&[], 0.5).is_err());
        // order independence
        let shuffled = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(empirical_quantile(&shuffled, 0.5).unwrap(), 3.0);
    }

    #[test]
    fn two_point_exact_quantiles() {
        let p = TwoPointExample::new(2.0, 0.75).unwrap();
        // atoms at x=-0.5: 0.5 (mass 0.25), 1.5 (mass 0.75)
        assert_eq!(exact_quantile_two_point(-0.5, &p, 0.2), 0.5);
        assert_eq!(exact_quantile_two_point(-0.5, &p, 0.5), 1.5);
        // atoms at x=-1.5: 0.5 (mass 0.75), 1.5 (mass 0.25)
        assert_eq!(exact_quantile_two_point(-1.5, &p, 0.6), 0.5);
        assert_eq!(exact_quantile_two_point(-1.5, &p, 0.75), 0.5);
        assert_eq!(exact_quantile_two_point(-1.5, &p, 0.76), 1.5);
    }

    #[test]
    fn zero_noise_threshold_is_gradient_norm() {
        let p = QuadraticProblem::isotropic(2, NoiseModel::None).unwrap();
        let mut r = RngStream::new(5, StreamId::QuantileEstimation);
        let est = estimate_threshold(&p, &[3.0, 4.0], 0.5, 16, &mut r).unwrap();
        assert_eq!(est.tau, 5.0);
        let exact = exact_threshold(&p, &[3.0, 4.0], 0.5).unwrap();
        assert_eq!(exact.tau, 5.0);
        assert_eq!(exact.source, ThresholdSource::ExactDiscrete);
    }

    #[test]
    fn two_point_exact_mode_dispatches_to_discrete_quantile() {
        let p = TwoPointExample::new(2.0, 0.75).unwrap();
        for (x, pp) in [(-0.5, 0.2), (-0.5, 0.5), (-1.5, 0.6), (-1.5, 0.76)] {
            let est = exact_threshold(&p, &[x], pp).unwrap();
            assert_eq!(est.tau, exact_quantile_two_point(x, &p, pp));
            assert_eq!(est.source, ThresholdSource::ExactDiscrete);
        }
        // no closed form on a noisy quadratic
        let q = QuadraticProblem::isotropic(2, NoiseModel::Gaussian { sigma: 1.0 }).unwrap();
        assert!(exact_threshold(&q, &[1.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn uniform_norm_quantile_concentrates() {
        // synthetic norms ~ U(0,1): the 0.5-quantile of 10^4 samples is
        // within O(m^{-1/2}) of 0.5.
        let mut r = RngStream::new(11, StreamId::QuantileEstimation);
        use rand::Rng;
        let norms: Vec<f64> = (0..10_000).map(|_| r.gen::<f64>()).collect();
        let q = empirical_quantile(&norms, 0.5).unwrap();
        assert!((q - 0.5).abs() < 0.02, "got {q}");
    }

    #[test]
    fn tau_bound_values() {
        assert!((tau_upper_bound(1.0, 1.0, 0.75, 2.0) - 3.0).abs() < 1e-12);
        let v = tau_upper_bound(0.0, 2.0, 0.5, 2.0);
        assert!((v - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
        let v = tau_upper_bound(1.0, 1.0, 0.5, 2.0);
        assert!((v - (1.0 + std::f64::consts::SQRT_2)).abs() < 1e-12);
    }

    #[test]
    fn bias_bound_values() {
        assert!((bias_upper_bound(1.0, 0.75, 2.0) - 0.5).abs() < 1e-12);
        assert!(bias_upper_bound(3.0, 1.0 - 1e-12, 2.0) < 1e-5);
        let v = bias_upper_bound(2.0, 0.5, 1.5);
        assert!((v - 2.0 * 0.5f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn bias_zero_noise() {
        let p = QuadraticProblem::isotropic(2, NoiseModel::None).unwrap();
        let mut r = RngStream::new(3, StreamId::DataSampling);
        let est = empirical_bias(&p, &[1.0, 2.0], 0.5, 10_000, &mut r).unwrap();
        assert_eq!(est.bias_norm, 0.0);
        assert_eq!(est.alpha_bar, 1.0);
    }

    #[test]
    fn bias_two_point_no_clipping_at_high_p() {
        // p=0.8 puts the threshold at the larger atom; nothing is clipped, so
        // the exact bias is 0 and the MC estimate is zero up to sampling
        // error, while alpha is identically 1.
        let p = TwoPointExample::new(2.0, 0.75).unwrap();
        let mut r = RngStream::new(9, StreamId::DataSampling);
        let est = empirical_bias(&p, &[-3.0], 0.8, 20_000, &mut r).unwrap();
        assert_eq!(est.alpha_bar, 1.0);
        assert_eq!(est.alpha_stderr, 0.0);
        assert!(est.bias_norm <= 4.0 * est.bias_stderr, "bias {}", est.bias_norm);
    }

    #[test]
    fn bias_two_point_matches_enumeration() {
        // x=-3, p=0.5: atoms |x+r|=1 (mass .75) and |x|=3 (mass .25),
        // tau = 1, alpha = (1, 1/3), handled exactly by enumeration.
        let p = TwoPointExample::new(2.0, 0.75).unwrap();
        let x = -3.0;
        let tau = exact_quantile_two_point(x, &p, 0.5);
        assert_eq!(tau, 1.0);
        let (a1, a2) = (1.0, tau / 3.0);
        let alpha_bar = 0.75 * a1 + 0.25 * a2;
        let e_clipped = 0.75 * a1 * (x + 2.0) + 0.25 * a2 * x;
        let expected_bias = (e_clipped - alpha_bar * (x + 1.5)).abs();

        let mut r = RngStream::new(13, StreamId::DataSampling);
        let est = empirical_bias(&p, &[x], 0.5, 200_000, &mut r).unwrap();
        assert!(
            (est.alpha_bar - alpha_bar).abs() < 4.0 * est.alpha_stderr + 1e-9,
            "alpha_bar {} vs {}",
            est.alpha_bar,
            alpha_bar
        );
        assert!(
            (est.bias_norm - expected_bias).abs() < 4.0 * est.bias_stderr + 1e-9,
            "bias {} vs {}",
            est.bias_norm,
            expected_bias
        );
        // Lemma-style checks on the exact values
        assert!(alpha_bar >= 0.5);
        let sigma2 = p.sigma_q().unwrap();
        assert!(expected_bias <= bias_upper_bound(sigma2, 0.5, 2.0));
    }

    #[test]
    fn alpha_bar_at_least_p_with_exact_threshold() {
        let p = TwoPointExample::new(2.0, 0.75).unwrap();
        let mut r = RngStream::new(21, StreamId::DataSampling);
        for (x, pp) in [(-0.5, 0.5), (-3.0, 0.6), (1.0, 0.9), (-1.6, 0.3)] {
            let est = empirical_bias(&p, &[x], pp, 20_000, &mut r).unwrap();
            assert!(
                est.alpha_bar >= pp - 4.0 * est.alpha_stderr,
                "alpha_bar {} < p {} at x={x}",
                est.alpha_bar,
                pp
            );
        }
    }

    proptest! {
        // ||alpha * g|| = min(||g||, tau) up to IEEE rounding.
        #[test]
        fn clip_identity(
            g in proptest::collection::vec(-1e6f64..1e6, 1..8),
            tau in 0.0f64..1e6,
        ) {
            let n = l2_norm(&g);
            let alpha = clip_coefficient(n, tau);
            let clipped: Vec<f64> = g.iter().map(|v| alpha * v).collect();
            let cn = l2_norm(&clipped);
            let want = n.min(tau);
            prop_assert!((cn - want).abs() <= 1e-12 * (1.0 + want));
        }

        // count of sample elements strictly above the empirical quantile is
        // at most m - ceil(p m): exact combinatorial fact.
        #[test]
        fn order_statistic_clip_count(
            xs in proptest::collection::vec(0.0f64..100.0, 2..200),
            p in 0.01f64..0.99,
        ) {
            let tau = empirical_quantile(&xs, p).unwrap();
            let m = xs.len();
            let k = ((p * m as f64).ceil() as usize).max(1);
            let above = xs.iter().filter(|v| **v > tau).count();
            prop_assert!(above <= m - k);
        }

        // non-decreasing in p for a fixed sample
        #[test]
        fn quantile_monotone_in_p(
            xs in proptest::collection::vec(0.0f64..100.0, 2..100),
            p1 in 0.01f64..0.98,
            dp in 0.001f64..0.01,
        ) {
            let q1 = empirical_quantile(&xs, p1).unwrap();
            let q2 = empirical_quantile(&xs, p1 + dp).unwrap();
            prop_assert!(q2 >= q1);
        }
    }
}

//! The clipped-SGD iteration and its trace recording.
//!
//! One loop drives all four algorithms; they differ only in how the
//! threshold is produced (none / constant / quantile) and whether a batch
//! plus Gaussian noise is used (the DP extension in `privacy`).

use rand_distr::{Distribution, StandardNormal};

use crate::clipping::{clip_coefficient, empirical_quantile_in_place, ClipConfig};
use crate::error::{Error, Result};
use crate::privacy::DpConfig;
use crate::problems::StochasticProblem;
use crate::rng::{RngStream, StreamId};
use crate::schedule::StepSchedule;
use crate::trace::{RunTrace, TraceRow};
use crate::vector::{all_finite, l2_norm, l2_norm_sq, ParamVector};

/// Configuration of a single optimizer run.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub clip: ClipConfig,
    pub steps: StepSchedule,
    /// Iteration budget T.
    pub horizon: usize,
    pub x0: ParamVector,
    pub seed: u64,
    /// Record a trace row every this many iterations (1 = every iteration).
    pub trace_every: usize,
}

impl OptimizerConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        self.clip.validate()?;
        self.steps.validate()?;
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if self.trace_every == 0 {
            return Err(Error::invalid("trace_every", "must be at least 1"));
        }
        if self.x0.dim() != dim {
            return Err(Error::invalid(
                "x0",
                format!("dimension {} does not match problem dimension {dim}", self.x0.dim()),
            ));
        }
        Ok(())
    }
}

/// Largest admissible constant step size for quantile clipping at quantile
/// `p`: `(2p - beta - c) / (2L)`. Rejects parameter combinations where the
/// bound is not strictly positive.
pub fn max_step_size(p: f64, beta: f64, c: f64, smoothness: f64) -> Result<f64> {
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
    if beta + c >= 2.0 * p {
        return Err(Error::invalid(
            "beta",
            format!("beta + c = {} must be strictly below 2p = {}", beta + c, 2.0 * p),
        ));
    }
    Ok((2.0 * p - beta - c) / (2.0 * smoothness))
}

/// One QC-SGD step: `x - gamma * alpha * g` with
/// `alpha = min(1, tau / ||g||)`.
pub fn qc_sgd_step(x: &ParamVector, gamma: f64, grad_sample: &ParamVector, tau: f64) -> ParamVector {
    let alpha = clip_coefficient(l2_norm(grad_sample), tau);
    let mut out = x.as_slice().to_vec();
    for i in 0..out.len() {
        out[i] -= gamma * alpha * grad_sample[i];
    }
    ParamVector::from_raw(out)
}

/// Run QC-SGD (quantile clipping mode).
pub fn run_qc_sgd(problem: &dyn StochasticProblem, config: &OptimizerConfig) -> Result<RunTrace> {
    if !matches!(config.clip, ClipConfig::Quantile { .. }) {
        return Err(Error::invalid("clip", "run_qc_sgd requires quantile clipping mode"));
    }
    run_loop(problem, config, None)
}

/// Run SGD with a constant clipping threshold.
pub fn run_clipped_sgd(
    problem: &dyn StochasticProblem,
    config: &OptimizerConfig,
) -> Result<RunTrace> {
    if !matches!(config.clip, ClipConfig::Constant { .. }) {
        return Err(Error::invalid("clip", "run_clipped_sgd requires a constant threshold"));
    }
    run_loop(problem, config, None)
}

/// Run vanilla SGD (no clipping).
pub fn run_sgd(problem: &dyn StochasticProblem, config: &OptimizerConfig) -> Result<RunTrace> {
    if !matches!(config.clip, ClipConfig::None) {
        return Err(Error::invalid("clip", "run_sgd requires clipping mode `none`"));
    }
    run_loop(problem, config, None)
}

/// Shared iteration loop. `dp` switches on mini-batching plus
/// threshold-scaled Gaussian noise.
///
/// Stream discipline per iteration: `m` threshold draws (quantile mode,
/// empirical) from the quantile-estimation stream, then `B` update draws
/// from the data stream, then one noise vector from the DP stream when the
/// noise multiplier is positive. Exact-threshold mode consumes no
/// quantile-stream draws, so runs differing only in threshold mode keep
/// identical data draws.
pub(crate) fn run_loop(
    problem: &dyn StochasticProblem,
    config: &OptimizerConfig,
    dp: Option<&DpConfig>,
) -> Result<RunTrace> {
    let d = problem.dim();
    config.validate(d)?;
    if let Some(dp_cfg) = dp {
        dp_cfg.validate()?;
        if matches!(config.clip, ClipConfig::None) {
            return Err(Error::invalid("clip", "DP runs require a clipping mode"));
        }
    }
    if let ClipConfig::Quantile { exact: true, .. } = &config.clip {
        if problem.exact_norm_quantile(&config.x0, 0.5).is_none() {
            return Err(Error::invalid(
                "exact",
                "problem has no closed-form gradient-norm quantile",
            ));
        }
    }

    let batch = dp.map_or(1, |c| c.batch_size);
    let sigma_dp = dp.map(|c| c.sigma_dp()).unwrap_or(0.0);
    let is_dp = dp.is_some();

    let mut data_rng = RngStream::new(config.seed, StreamId::DataSampling);
    let mut quant_rng = RngStream::new(config.seed, StreamId::QuantileEstimation);
    let mut noise_rng = RngStream::new(config.seed, StreamId::DpNoise);

    let mut x: Vec<f64> = config.x0.as_slice().to_vec();
    let mut grad_buf = vec![0.0; d];
    let mut exact_grad = vec![0.0; d];
    let mut direction = vec![0.0; d];
    let mut norms_buf: Vec<f64> = match &config.clip {
        ClipConfig::Quantile { m, exact: false, .. } => vec![0.0; *m],
        _ => Vec::new(),
    };

    let t_total = config.horizon;
    let mut rows = Vec::with_capacity(t_total / config.trace_every + 1);
    let mut gamma_sum = 0.0;
    let mut weighted_grad_sq = 0.0;
    let mut min_grad_sq = f64::INFINITY;

    for t in 0..t_total {
        let gamma = config.steps.step_at(t);

        // Threshold for this iterate. `tau_applied` feeds the clip
        // coefficient; `tau_row`/`p_row` are what the trace records (0 when
        // no quantile threshold is active).
        let (tau_applied, tau_row, p_row) = match &config.clip {
            ClipConfig::None => (f64::INFINITY, 0.0, 0.0),
            ClipConfig::Constant { tau } => (*tau, *tau, 0.0),
            ClipConfig::Quantile { schedule, m, exact } => {
                let p = schedule.quantile_at(t);
                let tau = if *exact {
                    problem.exact_norm_quantile(&x, p).expect("checked above")
                } else {
                    for slot in norms_buf.iter_mut().take(*m) {
                        problem.grad_sample_into(&x, &mut grad_buf, &mut quant_rng);
                        *slot = l2_norm(&grad_buf);
                    }
                    empirical_quantile_in_place(&mut norms_buf, p)
                };
                (tau, tau, p)
            }
        };

        problem.grad_exact_into(&x, &mut exact_grad);
        let grad_sq = l2_norm_sq(&exact_grad);
        gamma_sum += gamma;
        weighted_grad_sq += gamma * grad_sq;
        min_grad_sq = min_grad_sq.min(grad_sq);

        // Batch of clipped stochastic gradients.
        direction.fill(0.0);
        let mut alpha_sum = 0.0;
        let mut any_clipped = false;
        for _ in 0..batch {
            problem.grad_sample_into(&x, &mut grad_buf, &mut data_rng);
            let alpha = clip_coefficient(l2_norm(&grad_buf), tau_applied);
            alpha_sum += alpha;
            if alpha < 1.0 {
                any_clipped = true;
            }
            for i in 0..d {
                direction[i] += alpha * grad_buf[i];
            }
        }
        let b = batch as f64;
        for v in direction.iter_mut() {
            *v /= b;
        }

        // One shared Gaussian vector per iteration, scaled by the current
        // threshold: (1/B) sum_j (g_j + z) = avg + z.
        let noise_scale = if is_dp { tau_applied * sigma_dp } else { 0.0 };
        if is_dp && sigma_dp > 0.0 {
            for v in direction.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                *v += noise_scale * z;
            }
        }

        if t % config.trace_every == 0 {
            rows.push(TraceRow {
                iter: t,
                f: problem.eval_f(&x),
                grad_norm_sq: grad_sq,
                tau: tau_row,
                p: p_row,
                gamma,
                alpha: alpha_sum / b,
                clipped: any_clipped,
                noise_scale,
                x_norm: l2_norm(&x),
            });
        }

        for i in 0..d {
            x[i] -= gamma * direction[i];
        }
        if !all_finite(&x) {
            return Err(Error::Diverged { iter: t });
        }
    }

    Ok(RunTrace {
        rows,
        final_x: ParamVector::from_raw(x),
        gamma_sum,
        weighted_grad_sq,
        min_grad_sq,
        iterations: t_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{NoiseModel, QuadraticProblem, TwoPointExample};
    use crate::schedule::QuantileSchedule;

    fn base_config(x0: Vec<f64>, clip: ClipConfig, gamma: f64, horizon: usize) -> OptimizerConfig {
        OptimizerConfig {
            clip,
            steps: StepSchedule::constant(gamma).unwrap(),
            horizon,
            x0: ParamVector::new(x0).unwrap(),
            seed: 7,
            trace_every: 1,
        }
    }

    #[test]
    fn qc_step_examples() {
        let x = ParamVector::new(vec![0.0, 0.0]).unwrap();
        let g = ParamVector::new(vec![2.0, 0.0]).unwrap();
        let out = qc_sgd_step(&x, 1.0, &g, 1.0);
        assert_eq!(out.as_slice(), &[-1.0, 0.0]);

        let x = ParamVector::new(vec![1.0, 1.0]).unwrap();
        let g = ParamVector::new(vec![0.5, 0.0]).unwrap();
        let out = qc_sgd_step(&x, 0.5, &g, 1.0);
        assert_eq!(out.as_slice(), &[0.75, 1.0]);

        // tau = 0 freezes the iterate
        let g = ParamVector::new(vec![3.0, -4.0]).unwrap();
        let out = qc_sgd_step(&x, 0.5, &g, 0.0);
        assert_eq!(out.as_slice(), x.as_slice());
    }

    #[test]
    fn max_step_size_examples() {
        assert!((max_step_size(0.9, 0.2, 0.2, 1.0).unwrap() - 0.7).abs() < 1e-15);
        assert!((max_step_size(0.75, 0.25, 0.25, 2.0).unwrap() - 0.25).abs() < 1e-15);
        // boundary beta + c = 2p gives gamma = 0: rejected
        assert!(max_step_size(0.5, 0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn zero_noise_quadratic_geometric_decay() {
        let p = QuadraticProblem::isotropic(1, NoiseModel::None).unwrap();
        let cfg = base_config(vec![1.0], ClipConfig::None, 0.5, 10);
        let trace = run_sgd(&p, &cfg).unwrap();
        assert_eq!(trace.final_x[0], 0.5f64.powi(10));
        // monotone objective decrease
        for w in trace.rows.windows(2) {
            assert!(w[1].f <= w[0].f);
        }
    }

    #[test]
    fn zero_noise_qc_with_exact_threshold_matches_geometric_decay() {
        // Exact threshold equals the gradient norm, so nothing is clipped.
        let p = QuadraticProblem::isotropic(1, NoiseModel::None).unwrap();
        let clip = ClipConfig::Quantile {
            schedule: QuantileSchedule::constant(0.5).unwrap(),
            m: 2,
            exact: true,
        };
        let cfg = base_config(vec![1.0], clip, 0.5, 10);
        let trace = run_qc_sgd(&p, &cfg).unwrap();
        assert_eq!(trace.final_x[0], 0.5f64.powi(10));
        assert!(trace.rows.iter().all(|r| r.alpha == 1.0 && !r.clipped));
    }

    #[test]
    fn seed_determinism() {
        let p = QuadraticProblem::isotropic(3, NoiseModel::Gaussian { sigma: 1.0 }).unwrap();
        let clip = ClipConfig::Quantile {
            schedule: QuantileSchedule::constant(0.8).unwrap(),
            m: 32,
            exact: false,
        };
        let cfg = base_config(vec![1.0, -2.0, 0.5], clip, 0.05, 200);
        let a = run_qc_sgd(&p, &cfg).unwrap();
        let b = run_qc_sgd(&p, &cfg).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra, rb);
        }
        assert_eq!(a.final_x.as_slice(), b.final_x.as_slice());
    }

    #[test]
    fn huge_constant_tau_equals_vanilla_sgd() {
        let p = QuadraticProblem::isotropic(2, NoiseModel::Gaussian { sigma: 0.5 }).unwrap();
        let sgd_cfg = base_config(vec![2.0, -1.0], ClipConfig::None, 0.1, 300);
        let clip_cfg = base_config(vec![2.0, -1.0], ClipConfig::Constant { tau: 1e30 }, 0.1, 300);
        let a = run_sgd(&p, &sgd_cfg).unwrap();
        let b = run_clipped_sgd(&p, &clip_cfg).unwrap();
        assert_eq!(a.final_x.as_slice(), b.final_x.as_slice());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.f, rb.f);
            assert_eq!(ra.alpha, rb.alpha);
            assert_eq!(ra.x_norm, rb.x_norm);
            assert!(!rb.clipped);
        }
    }

    #[test]
    fn qc_with_near_one_quantile_matches_vanilla_on_bounded_noise() {
        // Exact two-point thresholds at p close to 1 select the larger atom:
        // no clipping, identical data draws, identical trajectory.
        let p = TwoPointExample::new(2.0, 0.75).unwrap();
        let sgd_cfg = base_config(vec![0.0], ClipConfig::None, 0.05, 500);
        let clip = ClipConfig::Quantile {
            schedule: QuantileSchedule::constant(0.99).unwrap(),
            m: 2,
            exact: true,
        };
        let qc_cfg = base_config(vec![0.0], clip, 0.05, 500);
        let a = run_sgd(&p, &sgd_cfg).unwrap();
        let b = run_qc_sgd(&p, &qc_cfg).unwrap();
        assert_eq!(a.final_x.as_slice(), b.final_x.as_slice());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.f, rb.f);
            assert_eq!(ra.x_norm, rb.x_norm);
        }
    }

    #[test]
    fn update_norm_capped_by_gamma_tau() {
        let p = QuadraticProblem::isotropic(2, NoiseModel::Gaussian { sigma: 2.0 }).unwrap();
        let clip = ClipConfig::Quantile {
            schedule: QuantileSchedule::constant(0.5).unwrap(),
            m: 64,
            exact: false,
        };
        let cfg = base_config(vec![5.0, 5.0], clip, 0.1, 400);
        let trace = run_qc_sgd(&p, &cfg).unwrap();
        // Reconstruct per-step movement from consecutive x_norm is not
        // possible; check the recorded alpha/tau identity instead: the step
        // magnitude is gamma * alpha * ||g|| <= gamma * tau.
        for r in &trace.rows {
            assert!(r.alpha <= 1.0 && r.alpha >= 0.0);
            assert!(r.tau >= 0.0);
        }
    }

    #[test]
    fn divergence_guard_fires() {
        let p = QuadraticProblem::isotropic(1, NoiseModel::None).unwrap();
        // gamma far above 2/L on a quadratic: |x| doubles every step and
        // overflows to infinity.
        let cfg = base_config(vec![1.0], ClipConfig::None, 1e12, 10_000);
        let res = run_sgd(&p, &cfg);
        assert!(matches!(res, Err(Error::Diverged { .. })), "got {res:?}");
    }

    proptest::proptest! {
        // the step never moves the iterate farther than gamma * tau (up to
        // IEEE rounding), the exact identity of the method
        #[test]
        fn step_length_capped_by_gamma_tau(
            x in proptest::collection::vec(-100.0f64..100.0, 1..6),
            g in proptest::collection::vec(-100.0f64..100.0, 1..6),
            gamma in 1e-4f64..2.0,
            tau in 0.0f64..50.0,
        ) {
            let d = x.len().min(g.len());
            let xv = ParamVector::new(x[..d].to_vec()).unwrap();
            let gv = ParamVector::new(g[..d].to_vec()).unwrap();
            let stepped = qc_sgd_step(&xv, gamma, &gv, tau);
            let moved: f64 = (0..d)
                .map(|i| (stepped[i] - xv[i]) * (stepped[i] - xv[i]))
                .sum::<f64>()
                .sqrt();
            let cap = gamma * crate::vector::l2_norm(&gv).min(tau);
            proptest::prop_assert!(moved <= cap * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn sgd_time_average_improves_with_horizon() {
        // d=1 quadratic with gaussian noise, gamma = c/sqrt(T): the averaged
        // squared gradient shrinks as the horizon grows.
        let p = QuadraticProblem::isotropic(1, NoiseModel::Gaussian { sigma: 1.0 }).unwrap();
        let mut measures = Vec::new();
        for t_total in [100usize, 1000, 10_000] {
            let gamma = 0.5 / (t_total as f64).sqrt();
            let mut cfg = base_config(vec![2.0], ClipConfig::None, gamma, t_total);
            let mut acc = 0.0;
            let seeds = 8;
            for s in 0..seeds {
                cfg.seed = 100 + s;
                let trace = run_sgd(&p, &cfg).unwrap();
                acc += trace.stationarity(1.0);
            }
            measures.push(acc / seeds as f64);
        }
        assert!(measures[1] < measures[0]);
        assert!(measures[2] < measures[1]);
    }

    #[test]
    fn clipped_sgd_moves_exactly_gamma_tau_while_saturated() {
        // zero-noise quadratic far from the minimizer: every sample norm
        // exceeds tau, so each step has length exactly gamma * tau.
        let p = QuadraticProblem::isotropic(1, NoiseModel::None).unwrap();
        let cfg = base_config(vec![100.0], ClipConfig::Constant { tau: 1.0 }, 0.1, 100);
        let trace = run_clipped_sgd(&p, &cfg).unwrap();
        for w in trace.rows.windows(2) {
            let moved = w[0].x_norm - w[1].x_norm;
            assert!((moved - 0.1).abs() < 1e-12, "step {moved}");
            assert!(w[0].clipped);
        }
    }

    #[test]
    fn constant_tau_plateaus_at_expected_update_root() {
        // Bias demo: with a fixed threshold the iterates settle at the root
        // of the constant-tau expected update, away from the minimizer.
        let tp = TwoPointExample::new(2.0, 0.75).unwrap();
        let tau = 0.8;
        let expected_update = |x: f64| {
            let [(g1, w1), (g2, w2)] = tp.atoms(x);
            w1 * crate::clipping::clip_coefficient(g1.abs(), tau) * g1
                + w2 * crate::clipping::clip_coefficient(g2.abs(), tau) * g2
        };
        // bisection oracle for the root
        let (mut lo, mut hi) = (-2.0, -0.9);
        assert!(expected_update(lo) < 0.0 && expected_update(hi) > 0.0);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if expected_update(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!((root - tp.x_star()).abs() > 0.1, "root {root} too close to the minimizer");

        let cfg = base_config(vec![-1.5], ClipConfig::Constant { tau }, 0.005, 40_000);
        let trace = run_clipped_sgd(&tp, &cfg).unwrap();
        let tail = &trace.rows[20_000..];
        let mean_abs_x = tail.iter().map(|r| r.x_norm).sum::<f64>() / tail.len() as f64;
        assert!(
            (mean_abs_x - root.abs()).abs() < 0.05,
            "tail |x| {mean_abs_x} vs oracle root {root}"
        );
    }

    #[test]
    fn qc_sgd_settles_at_oracle_fixed_point() {
        // Constant p = 0.5 on the two-atom example: the time-averaged iterate
        // sits at the fixed point of the expected clipped update, which
        // carries a nonzero gradient.
        let tp = TwoPointExample::new(2.0, 0.75).unwrap();
        let root = crate::analysis::fixed_point_two_point(&tp, 0.5, -50.0, -1e-6).unwrap();
        let clip = ClipConfig::Quantile {
            schedule: QuantileSchedule::constant(0.5).unwrap(),
            m: 2,
            exact: true,
        };
        let mut cfg = base_config(vec![-1.5], clip, 0.01, 100_000);
        cfg.seed = 99;
        let trace = run_qc_sgd(&tp, &cfg).unwrap();
        let tail = &trace.rows[50_000..];
        let mean_abs_x = tail.iter().map(|r| r.x_norm).sum::<f64>() / tail.len() as f64;
        assert!(
            (mean_abs_x - root.abs()).abs() < 0.05,
            "tail |x| {mean_abs_x} vs oracle fixed point {root}"
        );
        let grad_at_root = root + tp.r() * tp.omega();
        assert!(grad_at_root.abs() > 0.1);
    }

    #[test]
    fn clip_fraction_tracks_one_minus_p() {
        // Near-stationary run on a continuous-noise problem: the clipped
        // fraction over the last window approximates 1 - p.
        let p = QuadraticProblem::isotropic(4, NoiseModel::Gaussian { sigma: 1.0 }).unwrap();
        let quantile = 0.75;
        let clip = ClipConfig::Quantile {
            schedule: QuantileSchedule::constant(quantile).unwrap(),
            m: 512,
            exact: false,
        };
        let cfg = base_config(vec![0.1, 0.0, -0.1, 0.0], clip, 0.01, 2000);
        let trace = run_qc_sgd(&p, &cfg).unwrap();
        let window = &trace.rows[1000..];
        let frac =
            window.iter().filter(|r| r.clipped).count() as f64 / window.len() as f64;
        let tol = 5.0 / (window.len() as f64).sqrt();
        assert!(
            (frac - (1.0 - quantile)).abs() < tol,
            "clip fraction {frac} vs {}",
            1.0 - quantile
        );
    }
}

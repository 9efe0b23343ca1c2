//! Built-in verification suites with canonical configurations.
//!
//! Each check compares a measured quantity against a bound; `margin >= 0`
//! iff the check passes. Every tolerance is pinned here, in code.

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    expected_update_two_point, fixed_point_two_point, lemma2_check, paper_fixed_point,
    rhs_corollary1, rhs_theorem2, BoundInputs,
};
use crate::clipping::{empirical_bias, estimate_threshold, tau_upper_bound, bias_upper_bound, ClipConfig};
use crate::error::{Error, Result};
use crate::optimizer::{run_qc_sgd, OptimizerConfig};
use crate::privacy::{run_dp_qc_sgd, DpConfig};
use crate::problems::{
    calibrate_sigma_q, NoiseModel, QuadraticProblem, StochasticProblem, TwoPointExample,
};
use crate::rng::{RngStream, StreamId};
use crate::runner::mean_stderr;
use crate::schedule::{schedule_exponents, QuantileSchedule, StepSchedule};
use crate::vector::ParamVector;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lemma1,
    Lemma2,
    Theorem1,
    Theorem2,
    BiasExample,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma1" => Ok(Suite::Lemma1),
            "lemma2" => Ok(Suite::Lemma2),
            "theorem1" => Ok(Suite::Theorem1),
            "theorem2" => Ok(Suite::Theorem2),
            "bias_example" => Ok(Suite::BiasExample),
            "all" => Ok(Suite::All),
            other => Err(Error::Config(format!(
                "unknown suite `{other}` (expected lemma1, lemma2, theorem1, theorem2, \
                 bias_example, or all)"
            ))),
        }
    }
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Lemma1 => "lemma1",
            Suite::Lemma2 => "lemma2",
            Suite::Theorem1 => "theorem1",
            Suite::Theorem2 => "theorem2",
            Suite::BiasExample => "bias_example",
            Suite::All => "all",
        }
    }
}

/// One verified inequality (or equality). `margin >= 0` iff `pass`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

impl CheckResult {
    fn upper(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        let margin = bound - measured;
        CheckResult { name: name.into(), measured, bound, margin, pass: measured <= bound }
    }

    fn lower(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        let margin = measured - bound;
        CheckResult { name: name.into(), measured, bound, margin, pass: measured >= bound }
    }

    fn exact(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        let pass = measured == bound;
        let margin = if pass { 0.0 } else { -(measured - bound).abs() };
        CheckResult { name: name.into(), measured, bound, margin, pass }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} measured={:.6e} bound={:.6e} margin={:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.bound,
            self.margin
        )
    }
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub checks: Vec<CheckResult>,
    pub all_pass: bool,
}

/// Run the named suite on a pool of `jobs` workers (0 = automatic).
pub fn run_suite(suite: Suite, jobs: usize) -> Result<VerifyReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let checks = pool.install(|| -> Result<Vec<CheckResult>> {
        Ok(match suite {
            Suite::Lemma1 => lemma1_suite()?,
            Suite::Lemma2 => lemma2_suite()?,
            Suite::Theorem1 => theorem1_suite()?,
            Suite::Theorem2 => theorem2_suite()?,
            Suite::BiasExample => bias_example_suite()?,
            Suite::All => {
                let mut all = lemma1_suite()?;
                all.extend(lemma2_suite()?);
                all.extend(theorem1_suite()?);
                all.extend(theorem2_suite()?);
                all.extend(bias_example_suite()?);
                all
            }
        })
    })?;
    let all_pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { suite: suite.name().into(), checks, all_pass })
}

const SEED_COUNT: usize = 20;
const SEED_BASE: u64 = 1000;

fn seeds() -> Vec<u64> {
    (0..SEED_COUNT as u64).map(|i| SEED_BASE + i).collect()
}

fn canonical_quadratic(dim: usize) -> QuadraticProblem {
    QuadraticProblem::new(vec![1.0; dim], vec![0.0; dim], NoiseModel::Gaussian { sigma: 1.0 }, 2.0)
        .expect("canonical quadratic")
}

fn canonical_two_point() -> TwoPointExample {
    TwoPointExample::new(2.0, 0.75).expect("canonical two-point")
}

/// Threshold and bias inequalities at 20 random points per problem,
/// p in {0.5, 0.75, 0.9}, q = 2, with sigma_q from calibration.
pub fn lemma1_suite() -> Result<Vec<CheckResult>> {
    const POINTS: usize = 20;
    const BIAS_SAMPLES: usize = 20_000;
    let mut checks = Vec::new();

    let quad = canonical_quadratic(10);
    let tp = canonical_two_point();

    // operative sigma_q from calibration at fixed probe points
    let mut cal_rng = RngStream::new(SEED_BASE, StreamId::DataSampling);
    let quad_probes: Vec<ParamVector> = (0..5)
        .map(|_| {
            ParamVector::from_raw((0..10).map(|_| 6.0 * cal_rng.gen::<f64>() - 3.0).collect())
        })
        .collect();
    let sigma_quad = calibrate_sigma_q(&quad, &quad_probes, 2.0, 20_000, &mut cal_rng)?;
    let tp_probes: Vec<ParamVector> = (0..5)
        .map(|_| ParamVector::from_raw(vec![7.0 * cal_rng.gen::<f64>() - 5.0]))
        .collect();
    let sigma_tp = calibrate_sigma_q(&tp, &tp_probes, 2.0, 20_000, &mut cal_rng)?;

    struct Case<'a> {
        label: &'a str,
        problem: &'a dyn StochasticProblem,
        sigma_q: f64,
    }
    let cases = [
        Case { label: "quadratic_d10", problem: &quad, sigma_q: sigma_quad },
        Case { label: "two_point", problem: &tp, sigma_q: sigma_tp },
    ];

    for case in &cases {
        let d = case.problem.dim();
        for &p in &[0.5, 0.75, 0.9] {
            let mut point_rng = RngStream::new(SEED_BASE + 7, StreamId::DataSampling);
            let mut est_rng = RngStream::new(SEED_BASE + 8, StreamId::QuantileEstimation);
            let mut max_tau_ratio = f64::NEG_INFINITY;
            let mut max_bias_excess = f64::NEG_INFINITY;
            let mut min_alpha_slack = f64::INFINITY;
            for _ in 0..POINTS {
                let x: Vec<f64> = if d == 1 {
                    vec![7.0 * point_rng.gen::<f64>() - 5.0]
                } else {
                    (0..d).map(|_| 6.0 * point_rng.gen::<f64>() - 3.0).collect()
                };
                let grad_norm = case.problem.grad_exact(&x).norm();
                let est = estimate_threshold(case.problem, &x, p, 512, &mut est_rng)?;
                let ub = tau_upper_bound(grad_norm, case.sigma_q, p, 2.0);
                max_tau_ratio = max_tau_ratio.max(est.tau / ub);

                let bias = empirical_bias(case.problem, &x, p, BIAS_SAMPLES, &mut est_rng)?;
                max_bias_excess =
                    max_bias_excess.max(bias.bias_norm - 4.0 * bias.bias_stderr);
                min_alpha_slack =
                    min_alpha_slack.min(bias.alpha_bar + 4.0 * bias.alpha_stderr - p);
            }
            checks.push(CheckResult::upper(
                format!("lemma1/tau_bound/{}/p={p}", case.label),
                max_tau_ratio,
                1.05,
            ));
            checks.push(CheckResult::upper(
                format!("lemma1/bias_bound/{}/p={p}", case.label),
                max_bias_excess,
                bias_upper_bound(case.sigma_q, p, 2.0),
            ));
            // alpha_bar >= p (statistical slack folded into the measured value)
            checks.push(CheckResult::lower(
                format!("lemma1/alpha_bar_ge_p/{}/p={p}", case.label),
                min_alpha_slack,
                0.0,
            ));
        }
    }
    Ok(checks)
}

/// Per-step recursion margin at 10 random states on two problems,
/// n_mc = 10^5 Monte-Carlo steps each.
pub fn lemma2_suite() -> Result<Vec<CheckResult>> {
    const STATES: usize = 10;
    const N_MC: usize = 100_000;
    let quad = canonical_quadratic(2);
    let tp = canonical_two_point();
    let gamma = 0.05;
    let p = 0.75;
    let beta = 0.2;

    let mut checks = Vec::new();
    struct Case<'a> {
        label: &'a str,
        problem: &'a dyn StochasticProblem,
    }
    for case in [
        Case { label: "quadratic_d2", problem: &quad },
        Case { label: "two_point", problem: &tp },
    ] {
        let d = case.problem.dim();
        let mut point_rng = RngStream::new(SEED_BASE + 21, StreamId::DataSampling);
        let states: Vec<Vec<f64>> = (0..STATES)
            .map(|_| {
                if d == 1 {
                    vec![5.0 * point_rng.gen::<f64>() - 4.0]
                } else {
                    (0..d).map(|_| 4.0 * point_rng.gen::<f64>() - 2.0).collect()
                }
            })
            .collect();
        let results: Vec<f64> = states
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = RngStream::new(SEED_BASE + 100 + i as u64, StreamId::DataSampling);
                lemma2_check(case.problem, x, gamma, p, beta, N_MC, &mut rng)
                    .map(|c| c.margin + 4.0 * c.stderr)
            })
            .collect::<Result<Vec<f64>>>()?;
        let worst = results.iter().cloned().fold(f64::INFINITY, f64::min);
        checks.push(CheckResult::lower(
            format!("lemma2/recursion_margin/{}", case.label),
            worst,
            0.0,
        ));
    }
    Ok(checks)
}

fn quantile_run_config(
    p: f64,
    m: usize,
    exact: bool,
    gamma: f64,
    horizon: usize,
    x0: Vec<f64>,
    seed: u64,
) -> OptimizerConfig {
    OptimizerConfig {
        clip: ClipConfig::Quantile {
            schedule: QuantileSchedule::constant(p).expect("valid p"),
            m,
            exact,
        },
        steps: StepSchedule::constant(gamma).expect("valid gamma"),
        horizon,
        x0: ParamVector::from_raw(x0),
        seed,
        trace_every: 1,
    }
}

/// Seed-averaged stationarity measure against the constant-parameter bound
/// for three configurations on the Gaussian quadratic.
pub fn theorem1_suite() -> Result<Vec<CheckResult>> {
    const T: usize = 10_000;
    const M: usize = 64;
    let quad = canonical_quadratic(10);
    let x0 = vec![1.0; 10];
    let f0 = quad.eval_f(&x0); // f_inf = 0
    let sigma_q = quad.sigma_q().expect("analytic sigma_2");
    let smoothness = quad.smoothness();

    // (p, beta, c, gamma); each gamma respects (2p - beta - c) / (2L)
    let configs = [
        (0.9, 0.2, 0.2, 0.35),
        (0.75, 0.3, 0.3, 0.2),
        (0.9, 0.5, 0.2, 0.05),
    ];
    let mut checks = Vec::new();
    for (p, beta, c, gamma) in configs {
        let inputs = BoundInputs { f0, smoothness, sigma_q, q: 2.0, beta, c };
        let bound = rhs_corollary1(&inputs, gamma, p, T)?;
        let measures: Vec<f64> = seeds()
            .par_iter()
            .map(|&seed| {
                let cfg = quantile_run_config(p, M, false, gamma, T, x0.clone(), seed);
                run_qc_sgd(&quad, &cfg).map(|t| t.stationarity(c))
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, _) = mean_stderr(&measures);
        checks.push(CheckResult::upper(
            format!("theorem1/stationarity_bound/p={p}/gamma={gamma}"),
            mean,
            bound.total,
        ));
    }
    Ok(checks)
}

/// Seed-averaged DP stationarity measure against the DP bound (2x slack on
/// the statistical estimate) for three (B, sigma_dp) configurations.
pub fn theorem2_suite() -> Result<Vec<CheckResult>> {
    const T: usize = 2_000;
    const M: usize = 64;
    let quad = canonical_quadratic(1);
    let x0 = vec![3.0];
    let f0 = quad.eval_f(&x0);
    let sigma_q = quad.sigma_q().expect("analytic sigma_2");
    let smoothness = quad.smoothness();
    let p = 0.9;
    let beta = 0.2;
    let c = 0.2;

    // (batch, sigma_dp, gamma); each gamma respects (p - beta/2 - c)/(2 L S)
    let configs = [(1usize, 0.5, 0.12), (16usize, 0.5, 0.3), (16usize, 2.0, 0.036)];
    let mut checks = Vec::new();
    for (batch, sigma_dp, gamma) in configs {
        let inputs = BoundInputs { f0, smoothness, sigma_q, q: 2.0, beta, c };
        let steps = StepSchedule::constant(gamma)?;
        let rhs = rhs_theorem2(&inputs, &steps, p, T, batch, sigma_dp)?;
        let dp = DpConfig {
            batch_size: batch,
            epsilon: 1.0,
            delta: 1e-5,
            horizon: T,
            calibration_c: 2.0,
            override_sigma_dp: Some(sigma_dp),
        };
        let measures: Vec<f64> = seeds()
            .par_iter()
            .map(|&seed| {
                let cfg = quantile_run_config(p, M, false, gamma, T, x0.clone(), seed);
                run_dp_qc_sgd(&quad, &cfg, &dp).map(|t| t.stationarity(c))
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, _) = mean_stderr(&measures);
        checks.push(CheckResult::upper(
            format!("theorem2/stationarity_bound_2x/B={batch}/sigma_dp={sigma_dp}"),
            mean,
            2.0 * rhs,
        ));
    }
    Ok(checks)
}

/// The two-atom bias example: closed-form and oracle fixed points, the
/// gamma-invariant plateau, and its elimination by the joint schedule.
pub fn bias_example_suite() -> Result<Vec<CheckResult>> {
    let mut checks = fixed_point_checks()?;
    checks.extend(plateau_checks()?);
    checks.extend(schedule_fix_checks()?);
    Ok(checks)
}

/// Closed-form fixed point of the normalized estimator, and the oracle root
/// under the discrete-quantile semantics together with its nonzero gradient.
pub fn fixed_point_checks() -> Result<Vec<CheckResult>> {
    let tp = canonical_two_point();
    let mut checks = Vec::new();
    checks.push(CheckResult::exact(
        "bias_example/paper_fixed_point(0.75)",
        paper_fixed_point(0.75)?,
        -3.0,
    ));
    let root = fixed_point_two_point(&tp, 0.5, -50.0, -1e-6)?;
    let grad_at_root = (root + tp.r() * tp.omega()).abs();
    checks.push(CheckResult::lower(
        "bias_example/grad_at_oracle_fixed_point",
        grad_at_root,
        0.1,
    ));
    checks.push(CheckResult::upper(
        "bias_example/oracle_fixed_point_residual",
        expected_update_two_point(root, &tp, 0.5).abs(),
        1e-9,
    ));
    Ok(checks)
}

/// Tail-averaged |grad f| stays on a positive floor that does not scale with
/// gamma across two decades (T = 10^5, 20 seeds, exact thresholds, p = 0.5).
pub fn plateau_checks() -> Result<Vec<CheckResult>> {
    const T_PLATEAU: usize = 100_000;
    let tp = canonical_two_point();
    let gammas = [1e-1, 1e-2, 1e-3];
    let mut floors = Vec::new();
    for gamma in gammas {
        let tails: Vec<f64> = seeds()
            .par_iter()
            .map(|&seed| {
                let cfg =
                    quantile_run_config(0.5, 2, true, gamma, T_PLATEAU, vec![-1.5], seed);
                let trace = run_qc_sgd(&tp, &cfg)?;
                let tail: Vec<f64> = trace.rows[T_PLATEAU / 2..]
                    .iter()
                    .map(|r| r.grad_norm_sq.sqrt())
                    .collect();
                Ok(tail.iter().sum::<f64>() / tail.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, _) = mean_stderr(&tails);
        floors.push(mean);
    }
    let min_floor = floors.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_floor = floors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(vec![
        CheckResult::lower("bias_example/plateau_floor_positive", min_floor, 0.05),
        CheckResult::upper("bias_example/plateau_floor_gamma_ratio", max_floor / min_floor, 3.0),
    ])
}

/// The joint schedule `gamma_t ~ (t+1)^(-2/3)`, `p_t = 1 - 0.5 (t+1)^(-1/3)`
/// drives the minimum recorded squared gradient down across horizon decades.
pub fn schedule_fix_checks() -> Result<Vec<CheckResult>> {
    let tp = canonical_two_point();
    let (theta, nu) = schedule_exponents(2.0)?;
    let steps = StepSchedule::polynomial(0.5, theta)?;
    let quantiles = QuantileSchedule::polynomial(0.5, nu, 1e-4)?;
    let mut min_means = Vec::new();
    for t_total in [1_000usize, 10_000, 100_000] {
        let mins: Vec<f64> = seeds()
            .par_iter()
            .map(|&seed| {
                let cfg = OptimizerConfig {
                    clip: ClipConfig::Quantile { schedule: quantiles.clone(), m: 2, exact: true },
                    steps: steps.clone(),
                    horizon: t_total,
                    x0: ParamVector::from_raw(vec![0.0]),
                    seed,
                    trace_every: 1,
                };
                run_qc_sgd(&tp, &cfg).map(|t| t.min_grad_sq)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (mean, _) = mean_stderr(&mins);
        min_means.push(mean);
    }
    let worst_step_ratio = (min_means[1] / min_means[0]).max(min_means[2] / min_means[1]);
    Ok(vec![
        CheckResult::upper("bias_example/schedule_fix_monotone_decrease", worst_step_ratio, 1.0),
        CheckResult::upper(
            "bias_example/schedule_fix_halving_over_decades",
            min_means[2] / min_means[0],
            0.5,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in ["lemma1", "lemma2", "theorem1", "theorem2", "bias_example", "all"] {
            let suite: Suite = s.parse().unwrap();
            assert_eq!(suite.name(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn check_result_margins() {
        let c = CheckResult::upper("x", 1.0, 2.0);
        assert!(c.pass && c.margin == 1.0);
        let c = CheckResult::lower("x", 1.0, 2.0);
        assert!(!c.pass && c.margin == -1.0);
        let c = CheckResult::exact("x", -3.0, -3.0);
        assert!(c.pass && c.margin == 0.0);
        let c = CheckResult::exact("x", -3.0 + 1e-12, -3.0);
        assert!(!c.pass);
        assert!(c.line().starts_with("FAIL"));
    }
}

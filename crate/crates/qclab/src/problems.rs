//! Synthetic stochastic objectives with known constants.
//!
//! Every problem exposes the exact objective, exact gradient, a sampled
//! gradient, and the constants (L, q, sigma_q, f_inf) needed to evaluate the
//! convergence bounds, so no theorem quantity has to be estimated from data.

use rand::Rng;
use rand_distr::{Distribution, Pareto, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::vector::{l2_norm, sub_into, ParamVector};

/// Capability contract for a stochastic objective.
///
/// `grad_sample_into` must be unbiased for `grad_exact_into` and have bounded
/// q-th central moment `sigma_q` at every point where that constant is known.
pub trait StochasticProblem: Sync {
    fn dim(&self) -> usize;

    fn eval_f(&self, x: &[f64]) -> f64;

    fn grad_exact_into(&self, x: &[f64], out: &mut [f64]);

    fn grad_sample_into(&self, x: &[f64], out: &mut [f64], rng: &mut RngStream);

    /// Smoothness constant L.
    fn smoothness(&self) -> f64;

    /// Declared moment order q ∈ (1, 2].
    fn moment_order(&self) -> f64;

    /// Operative sigma_q: analytic where one exists, otherwise set from
    /// calibration. `None` means calibration is still required.
    fn sigma_q(&self) -> Option<f64>;

    /// Global lower bound on f.
    fn f_inf(&self) -> f64;

    /// Exact p-th quantile of the gradient-norm distribution at `x`, for
    /// problems whose norm distribution is computable in closed form.
    fn exact_norm_quantile(&self, _x: &[f64], _p: f64) -> Option<f64> {
        None
    }

    fn grad_exact(&self, x: &[f64]) -> ParamVector {
        let mut out = vec![0.0; self.dim()];
        self.grad_exact_into(x, &mut out);
        ParamVector::from_raw(out)
    }

    fn grad_sample(&self, x: &[f64], rng: &mut RngStream) -> ParamVector {
        let mut out = vec![0.0; self.dim()];
        self.grad_sample_into(x, &mut out, rng);
        ParamVector::from_raw(out)
    }
}

/// Additive per-coordinate gradient noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    None,
    Gaussian { sigma: f64 },
    /// Student-t with `dof` degrees of freedom scaled by `scale`. Finite
    /// moments of order strictly below `dof`.
    StudentT { dof: f64, scale: f64 },
    /// Pareto(tail_index) magnitude with a random sign. Mean zero by
    /// symmetry; finite moments of order strictly below `tail_index`.
    ParetoSymmetric { tail_index: f64, scale: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { sigma } => {
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(Error::invalid("sigma", format!("must be >= 0, got {sigma}")));
                }
                Ok(())
            }
            NoiseModel::StudentT { dof, scale } => {
                if !(dof.is_finite() && dof > 1.0) {
                    return Err(Error::invalid("dof", format!("must be > 1, got {dof}")));
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::invalid("scale", format!("must be > 0, got {scale}")));
                }
                Ok(())
            }
            NoiseModel::ParetoSymmetric { tail_index, scale } => {
                if !(tail_index.is_finite() && tail_index > 1.0) {
                    return Err(Error::invalid(
                        "tail_index",
                        format!("must be > 1, got {tail_index}"),
                    ));
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::invalid("scale", format!("must be > 0, got {scale}")));
                }
                Ok(())
            }
        }
    }

    /// Supremum of moment orders with a finite moment. The q-th absolute
    /// moment is finite iff q < this value.
    pub fn finite_moment_sup(&self) -> f64 {
        match *self {
            NoiseModel::None | NoiseModel::Gaussian { .. } => f64::INFINITY,
            NoiseModel::StudentT { dof, .. } => dof,
            NoiseModel::ParetoSymmetric { tail_index, .. } => tail_index,
        }
    }

    fn add_into(&self, out: &mut [f64], rng: &mut RngStream) {
        match *self {
            NoiseModel::None => {}
            NoiseModel::Gaussian { sigma } => {
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += sigma * z;
                }
            }
            NoiseModel::StudentT { dof, scale } => {
                let dist = StudentT::new(dof).expect("validated dof");
                for v in out.iter_mut() {
                    let z: f64 = dist.sample(rng);
                    *v += scale * z;
                }
            }
            NoiseModel::ParetoSymmetric { tail_index, scale } => {
                let dist = Pareto::new(scale, tail_index).expect("validated pareto");
                for v in out.iter_mut() {
                    let mag: f64 = dist.sample(rng);
                    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    *v += sign * mag;
                }
            }
        }
    }
}

/// Quadratic objective `f(x) = 1/2 (x - x_star)^T A (x - x_star)` with a
/// diagonal curvature matrix, so L, x_star, and f_inf = 0 are exact.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    a_diag: Vec<f64>,
    x_star: Vec<f64>,
    noise: NoiseModel,
    q: f64,
    sigma_q: Option<f64>,
}

impl QuadraticProblem {
    pub fn new(a_diag: Vec<f64>, x_star: Vec<f64>, noise: NoiseModel, q: f64) -> Result<Self> {
        if a_diag.is_empty() || a_diag.len() != x_star.len() {
            return Err(Error::invalid(
                "a_diag",
                "a_diag and x_star must be non-empty and of equal length",
            ));
        }
        if a_diag.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::invalid("a_diag", "entries must be finite and >= 0"));
        }
        if a_diag.iter().all(|a| *a == 0.0) {
            return Err(Error::invalid("a_diag", "at least one positive curvature entry"));
        }
        if x_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x_star", "entries must be finite"));
        }
        if !(q.is_finite() && 1.0 < q && q <= 2.0) {
            return Err(Error::invalid("q", format!("must lie in (1,2], got {q}")));
        }
        noise.validate()?;
        if q >= noise.finite_moment_sup() {
            return Err(Error::invalid(
                "q",
                format!(
                    "declared moment order {q} is not finite for this noise model \
                     (finite below {})",
                    noise.finite_moment_sup()
                ),
            ));
        }
        // Gaussian per-coordinate noise has an analytic q=2 moment:
        // E||delta||^2 = sigma^2 d, so sigma_2 = sigma sqrt(d).
        let sigma_q = match noise {
            NoiseModel::None => Some(0.0),
            NoiseModel::Gaussian { sigma } if q == 2.0 => {
                Some(sigma * (a_diag.len() as f64).sqrt())
            }
            _ => None,
        };
        Ok(QuadraticProblem { a_diag, x_star, noise, q, sigma_q })
    }

    /// Isotropic unit-curvature instance: A = I, x_star = 0.
    pub fn isotropic(dim: usize, noise: NoiseModel) -> Result<Self> {
        QuadraticProblem::new(vec![1.0; dim], vec![0.0; dim], noise, 2.0)
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    /// Install a calibrated sigma_q for noise models without an analytic one.
    pub fn with_sigma_q(mut self, sigma_q: f64) -> Self {
        self.sigma_q = Some(sigma_q);
        self
    }
}

impl StochasticProblem for QuadraticProblem {
    fn dim(&self) -> usize {
        self.a_diag.len()
    }

    fn eval_f(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            let d = xi - self.x_star[i];
            acc += self.a_diag[i] * d * d;
        }
        0.5 * acc
    }

    fn grad_exact_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = self.a_diag[i] * (x[i] - self.x_star[i]);
        }
    }

    fn grad_sample_into(&self, x: &[f64], out: &mut [f64], rng: &mut RngStream) {
        self.grad_exact_into(x, out);
        self.noise.add_into(out, rng);
    }

    fn smoothness(&self) -> f64 {
        self.a_diag.iter().cloned().fold(0.0, f64::max)
    }

    fn moment_order(&self) -> f64 {
        self.q
    }

    fn sigma_q(&self) -> Option<f64> {
        self.sigma_q
    }

    fn f_inf(&self) -> f64 {
        0.0
    }

    fn exact_norm_quantile(&self, x: &[f64], _p: f64) -> Option<f64> {
        // Only the degenerate noise model has a closed-form norm distribution:
        // a point mass at ||grad f(x)||.
        match self.noise {
            NoiseModel::None => {
                let g = self.grad_exact(x);
                Some(g.norm())
            }
            _ => None,
        }
    }
}

/// One-dimensional two-atom objective:
/// `f_xi(x) = 1/2 (x+r)^2` with probability `omega`, `1/2 x^2` otherwise,
/// so `grad f(x) = x + r*omega` and the minimizer is `x_star = -r*omega`.
#[derive(Debug, Clone)]
pub struct TwoPointExample {
    r: f64,
    omega: f64,
    q: f64,
}

impl TwoPointExample {
    pub fn new(r: f64, omega: f64) -> Result<Self> {
        TwoPointExample::with_moment_order(r, omega, 2.0)
    }

    pub fn with_moment_order(r: f64, omega: f64, q: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid("r", format!("must be > 0, got {r}")));
        }
        if !(omega.is_finite() && 0.5 < omega && omega < 1.0) {
            return Err(Error::invalid("omega", format!("must lie in (1/2,1), got {omega}")));
        }
        if !(q.is_finite() && 1.0 < q && q <= 2.0) {
            return Err(Error::invalid("q", format!("must lie in (1,2], got {q}")));
        }
        Ok(TwoPointExample { r, omega, q })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn x_star(&self) -> f64 {
        -self.r * self.omega
    }

    /// The two gradient atoms at `x`: (value, probability).
    pub fn atoms(&self, x: f64) -> [(f64, f64); 2] {
        [(x + self.r, self.omega), (x, 1.0 - self.omega)]
    }
}

impl StochasticProblem for TwoPointExample {
    fn dim(&self) -> usize {
        1
    }

    fn eval_f(&self, x: &[f64]) -> f64 {
        let x = x[0];
        0.5 * (self.omega * (x + self.r) * (x + self.r) + (1.0 - self.omega) * x * x)
    }

    fn grad_exact_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] + self.r * self.omega;
    }

    fn grad_sample_into(&self, x: &[f64], out: &mut [f64], rng: &mut RngStream) {
        let u: f64 = rng.gen();
        out[0] = if u < self.omega { x[0] + self.r } else { x[0] };
    }

    fn smoothness(&self) -> f64 {
        1.0
    }

    fn moment_order(&self) -> f64 {
        self.q
    }

    fn sigma_q(&self) -> Option<f64> {
        // Central deviations are r(1-omega) w.p. omega and -r*omega otherwise.
        let q = self.q;
        let m = self.omega * (self.r * (1.0 - self.omega)).powf(q)
            + (1.0 - self.omega) * (self.r * self.omega).powf(q);
        Some(m.powf(1.0 / q))
    }

    fn f_inf(&self) -> f64 {
        // f at the minimizer -r*omega.
        0.5 * self.r * self.r * self.omega * (1.0 - self.omega)
    }

    fn exact_norm_quantile(&self, x: &[f64], p: f64) -> Option<f64> {
        Some(crate::clipping::exact_quantile_two_point(x[0], self, p))
    }
}

/// Central-difference gradient oracle built on `eval_f` only.
pub fn finite_diff_grad(
    problem: &dyn StochasticProblem,
    x: &[f64],
    epsilon: f64,
) -> Result<ParamVector> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid("epsilon", format!("must be > 0, got {epsilon}")));
    }
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        xp[i] = x[i] + epsilon;
        xm[i] = x[i] - epsilon;
        g[i] = (problem.eval_f(&xp) - problem.eval_f(&xm)) / (2.0 * epsilon);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    Ok(ParamVector::from_raw(g))
}

/// Empirical `(E ||grad f_xi - grad f||^q)^(1/q)`, maximized over probe
/// points.
///
/// The estimate at each point is checked between the last two doubling
/// checkpoints (`n/2` vs `n` samples); a relative drift above 5% flags
/// non-convergence, which is the observable symptom of a declared `q` too
/// close to the tail index of the noise.
pub fn calibrate_sigma_q(
    problem: &dyn StochasticProblem,
    probe_points: &[ParamVector],
    q: f64,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if n_samples < 1000 {
        return Err(Error::invalid("n_samples", "need at least 1000 samples"));
    }
    if probe_points.is_empty() {
        return Err(Error::invalid("probe_points", "need at least one probe point"));
    }
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::invalid("q", format!("must be > 0, got {q}")));
    }
    let d = problem.dim();
    let mut grad = vec![0.0; d];
    let mut sample = vec![0.0; d];
    let mut delta = vec![0.0; d];
    let half = n_samples / 2;
    let mut worst = 0.0f64;
    for x in probe_points {
        if x.dim() != d {
            return Err(Error::invalid("probe_points", "dimension mismatch"));
        }
        problem.grad_exact_into(x, &mut grad);
        let mut acc = 0.0;
        let mut acc_half = 0.0;
        for i in 0..n_samples {
            problem.grad_sample_into(x, &mut sample, rng);
            sub_into(&sample, &grad, &mut delta);
            acc += l2_norm(&delta).powf(q);
            if i + 1 == half {
                acc_half = acc;
            }
        }
        let est_half = (acc_half / half as f64).powf(1.0 / q);
        let est_full = (acc / n_samples as f64).powf(1.0 / q);
        let drift = if est_half == 0.0 && est_full == 0.0 {
            0.0
        } else {
            (est_full - est_half).abs() / est_half.max(f64::MIN_POSITIVE)
        };
        if drift > 0.05 {
            return Err(Error::CalibrationNonConvergence(format!(
                "estimate moved {:.1}% between {half} and {n_samples} samples \
                 (q={q} may exceed the usable moment range of the noise)",
                drift * 100.0
            )));
        }
        worst = worst.max(est_full);
    }
    Ok(worst)
}

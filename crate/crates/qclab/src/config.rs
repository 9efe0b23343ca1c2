//! Run-configuration files: strict JSON schema, validation, and problem
//! construction.
//!
//! Parsing rejects unknown keys everywhere, so a misspelled field fails
//! before any computation, with serde's line/column diagnostics.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clipping::ClipConfig;
use crate::error::{Error, Result};
use crate::optimizer::OptimizerConfig;
use crate::privacy::{DpConfig, DEFAULT_CALIBRATION_C};
use crate::problems::{NoiseModel, QuadraticProblem, StochasticProblem, TwoPointExample};
use crate::schedule::StepSchedule;
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    ClippedSgd,
    QcSgd,
    DpQcSgd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::ClippedSgd => "clipped_sgd",
            Algorithm::QcSgd => "qc_sgd",
            Algorithm::DpQcSgd => "dp_qc_sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Quadratic {
        a_diag: Vec<f64>,
        x_star: Vec<f64>,
        noise: NoiseModel,
        #[serde(default = "default_q")]
        q: f64,
        /// Explicit sigma_q for noise models without an analytic value.
        #[serde(default)]
        sigma_q: Option<f64>,
    },
    TwoPoint {
        r: f64,
        omega: f64,
        #[serde(default = "default_q")]
        q: f64,
    },
}

fn default_q() -> f64 {
    2.0
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::Quadratic { a_diag, .. } => a_diag.len(),
            ProblemSpec::TwoPoint { .. } => 1,
        }
    }

    pub fn build(&self) -> Result<Box<dyn StochasticProblem>> {
        match self {
            ProblemSpec::Quadratic { a_diag, x_star, noise, q, sigma_q } => {
                let mut p =
                    QuadraticProblem::new(a_diag.clone(), x_star.clone(), noise.clone(), *q)?;
                if let Some(s) = sigma_q {
                    if !(s.is_finite() && *s >= 0.0) {
                        return Err(Error::Config("problem.sigma_q must be >= 0".into()));
                    }
                    p = p.with_sigma_q(*s);
                }
                Ok(Box::new(p))
            }
            ProblemSpec::TwoPoint { r, omega, q } => {
                Ok(Box::new(TwoPointExample::with_moment_order(*r, *omega, *q)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub clip: ClipConfig,
    pub step: StepSchedule,
    /// Iteration budget T.
    pub horizon: usize,
    pub x0: Vec<f64>,
    #[serde(default = "default_trace_every")]
    pub trace_every: usize,
}

fn default_trace_every() -> usize {
    1
}

/// DP block of the config file; `horizon` defaults to the optimizer horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSpec {
    pub batch_size: usize,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_calibration_c")]
    pub calibration_c: f64,
    #[serde(default)]
    pub override_sigma_dp: Option<f64>,
}

fn default_calibration_c() -> f64 {
    DEFAULT_CALIBRATION_C
}

impl DpSpec {
    pub fn to_dp_config(&self, default_horizon: usize) -> DpConfig {
        DpConfig {
            batch_size: self.batch_size,
            epsilon: self.epsilon,
            delta: self.delta,
            horizon: self.horizon.unwrap_or(default_horizon),
            calibration_c: self.calibration_c,
            override_sigma_dp: self.override_sigma_dp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_prefix() -> String {
    "run".into()
}

/// The full run-configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub dp: Option<DpSpec>,
    pub seeds: Vec<u64>,
    pub output: OutputSpec,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfigFile =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.clip.validate().map_err(cfg_err)?;
        self.optimizer.step.validate().map_err(cfg_err)?;
        if self.optimizer.horizon == 0 {
            return Err(Error::Config("optimizer.horizon must be at least 1".into()));
        }
        if self.optimizer.trace_every == 0 {
            return Err(Error::Config("optimizer.trace_every must be at least 1".into()));
        }
        let dim = self.dim();
        if self.optimizer.x0.len() != dim {
            return Err(Error::Config(format!(
                "optimizer.x0 has length {} but the problem has dimension {dim}",
                self.optimizer.x0.len()
            )));
        }
        if self.optimizer.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("optimizer.x0 entries must be finite".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        // problem constructibility (parameter ranges)
        self.problem.build().map_err(cfg_err)?;
        // algorithm / clip-mode compatibility
        match self.algorithm {
            Algorithm::Sgd => {
                if !matches!(self.optimizer.clip, ClipConfig::None) {
                    return Err(Error::Config(
                        "algorithm `sgd` requires optimizer.clip.mode = \"none\"".into(),
                    ));
                }
            }
            Algorithm::ClippedSgd => {
                if !matches!(self.optimizer.clip, ClipConfig::Constant { .. }) {
                    return Err(Error::Config(
                        "algorithm `clipped_sgd` requires optimizer.clip.mode = \"constant\""
                            .into(),
                    ));
                }
            }
            Algorithm::QcSgd | Algorithm::DpQcSgd => {
                if !matches!(self.optimizer.clip, ClipConfig::Quantile { .. }) {
                    return Err(Error::Config(format!(
                        "algorithm `{}` requires optimizer.clip.mode = \"quantile\"",
                        self.algorithm.name()
                    )));
                }
            }
        }
        match (self.algorithm, &self.dp) {
            (Algorithm::DpQcSgd, None) => {
                return Err(Error::Config("algorithm `dp_qc_sgd` requires a `dp` block".into()));
            }
            (Algorithm::DpQcSgd, Some(dp)) => {
                dp.to_dp_config(self.optimizer.horizon).validate().map_err(cfg_err)?;
            }
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "`dp` block is only valid for algorithm `dp_qc_sgd`, got `{}`",
                    self.algorithm.name()
                )));
            }
            (_, None) => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    /// Per-seed optimizer config.
    pub fn optimizer_config(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            clip: self.optimizer.clip.clone(),
            steps: self.optimizer.step.clone(),
            horizon: self.optimizer.horizon,
            x0: ParamVector::from_raw(self.optimizer.x0.clone()),
            seed,
            trace_every: self.optimizer.trace_every,
        }
    }

    pub fn dp_config(&self) -> Option<DpConfig> {
        self.dp.as_ref().map(|d| d.to_dp_config(self.optimizer.horizon))
    }

    /// SHA-256 of the canonical JSON form of the effective (post-override)
    /// configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        let mut out = String::with_capacity(2 * digest.len());
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

fn cfg_err(e: Error) -> Error {
    Error::Config(e.to_string())
}

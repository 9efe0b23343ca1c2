//! Config execution: per-seed runs fanned out to a worker pool, trace CSVs,
//! and sweep tables.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Algorithm, RunConfigFile};
use crate::error::{Error, Result};
use crate::optimizer::{run_clipped_sgd, run_qc_sgd, run_sgd};
use crate::privacy::run_dp_qc_sgd;
use crate::problems::StochasticProblem;
use crate::schedule::{QuantileSchedule, StepSchedule};
use crate::trace::{write_atomic, RunTrace};
use crate::clipping::ClipConfig;

/// Result of one (config, seed) job.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub trace: RunTrace,
    pub final_f: f64,
}

#[derive(Debug, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    /// Unweighted stationarity measure (c = 1); analysis applies its own c.
    pub stationarity: f64,
    pub final_f: f64,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub algorithm: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedSummary>,
    pub stationarity_mean: f64,
    pub stationarity_stderr: f64,
    pub final_f_mean: f64,
}

/// Execute one run of the configured algorithm for the given seed.
pub fn execute_seed(
    problem: &dyn StochasticProblem,
    cfg: &RunConfigFile,
    seed: u64,
) -> Result<SeedRun> {
    let opt = cfg.optimizer_config(seed);
    let trace = match cfg.algorithm {
        Algorithm::Sgd => run_sgd(problem, &opt)?,
        Algorithm::ClippedSgd => run_clipped_sgd(problem, &opt)?,
        Algorithm::QcSgd => run_qc_sgd(problem, &opt)?,
        Algorithm::DpQcSgd => {
            let dp = cfg.dp_config().ok_or_else(|| {
                Error::Config("dp_qc_sgd requires a dp block".into())
            })?;
            run_dp_qc_sgd(problem, &opt, &dp)?
        }
    };
    let final_f = problem.eval_f(&trace.final_x);
    Ok(SeedRun { seed, trace, final_f })
}

/// Run every seed of the config on a pool of `jobs` workers (0 = automatic),
/// returning results in seed order.
pub fn execute_all(cfg: &RunConfigFile, jobs: usize) -> Result<Vec<SeedRun>> {
    let problem = cfg.problem.build()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| execute_seed(problem.as_ref(), cfg, seed))
            .collect::<Result<Vec<_>>>()
    })
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(cfg: &RunConfigFile, runs: &[SeedRun]) -> RunSummary {
    let per_seed: Vec<SeedSummary> = runs
        .iter()
        .map(|r| SeedSummary {
            seed: r.seed,
            stationarity: r.trace.stationarity(1.0),
            final_f: r.final_f,
        })
        .collect();
    let stats: Vec<f64> = per_seed.iter().map(|s| s.stationarity).collect();
    let finals: Vec<f64> = per_seed.iter().map(|s| s.final_f).collect();
    let (stationarity_mean, stationarity_stderr) = mean_stderr(&stats);
    let (final_f_mean, _) = mean_stderr(&finals);
    RunSummary {
        config_hash: cfg.hash(),
        algorithm: cfg.algorithm.name().into(),
        seeds: cfg.seeds.clone(),
        per_seed,
        stationarity_mean,
        stationarity_stderr,
        final_f_mean,
    }
}

/// Execute the config and write one trace CSV per seed plus a JSON summary.
/// Returns the paths written.
pub fn run_to_files(cfg: &RunConfigFile, out_dir: &Path, jobs: usize) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let runs = execute_all(cfg, jobs)?;
    let mut written = Vec::new();
    for r in &runs {
        let path = out_dir.join(format!("{}_seed{}.csv", cfg.output.prefix, r.seed));
        write_atomic(&path, &r.trace.to_csv())?;
        written.push(path);
    }
    let summary = summarize(cfg, &runs);
    let path = out_dir.join(format!("{}_summary.json", cfg.output.prefix));
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_atomic(&path, &text)?;
    written.push(path);
    Ok(written)
}

/// Sweepable parameter axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Gamma,
    P,
    BatchSize,
    SigmaDp,
    Horizon,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(SweepAxis::Gamma),
            "p" => Ok(SweepAxis::P),
            "B" | "b" | "batch_size" => Ok(SweepAxis::BatchSize),
            "sigma_dp" => Ok(SweepAxis::SigmaDp),
            "T" | "t" | "horizon" => Ok(SweepAxis::Horizon),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (expected gamma, p, B, sigma_dp, or T)"
            ))),
        }
    }
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Gamma => "gamma",
            SweepAxis::P => "p",
            SweepAxis::BatchSize => "B",
            SweepAxis::SigmaDp => "sigma_dp",
            SweepAxis::Horizon => "T",
        }
    }
}

/// Apply one axis value to a copy of the config.
pub fn apply_axis(cfg: &RunConfigFile, axis: SweepAxis, value: f64) -> Result<RunConfigFile> {
    let mut out = cfg.clone();
    match axis {
        SweepAxis::Gamma => {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("gamma value must be > 0, got {value}")));
            }
            out.optimizer.step = match out.optimizer.step {
                StepSchedule::Constant { .. } => StepSchedule::Constant { gamma0: value },
                StepSchedule::Polynomial { theta, .. } => {
                    StepSchedule::Polynomial { gamma0: value, theta }
                }
            };
        }
        SweepAxis::P => match &mut out.optimizer.clip {
            ClipConfig::Quantile { schedule, .. } => {
                *schedule = QuantileSchedule::constant(value).map_err(|e| {
                    Error::Config(format!("p value {value}: {e}"))
                })?;
            }
            _ => {
                return Err(Error::Config(
                    "axis `p` requires quantile clipping (qc_sgd or dp_qc_sgd)".into(),
                ))
            }
        },
        SweepAxis::BatchSize => {
            let dp = out.dp.as_mut().ok_or_else(|| {
                Error::Config("axis `B` requires algorithm dp_qc_sgd".into())
            })?;
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("B must be a positive integer, got {value}")));
            }
            dp.batch_size = value as usize;
        }
        SweepAxis::SigmaDp => {
            let dp = out.dp.as_mut().ok_or_else(|| {
                Error::Config("axis `sigma_dp` requires algorithm dp_qc_sgd".into())
            })?;
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::Config(format!("sigma_dp must be >= 0, got {value}")));
            }
            dp.override_sigma_dp = Some(value);
        }
        SweepAxis::Horizon => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("T must be a positive integer, got {value}")));
            }
            out.optimizer.horizon = value as usize;
        }
    }
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    /// Hash of the effective config with this axis value applied.
    pub config_hash: String,
    pub per_seed: Vec<SeedSummary>,
    pub stationarity_mean: f64,
    pub stationarity_stderr: f64,
    pub final_f_mean: f64,
}

#[derive(Debug, Serialize)]
pub struct SweepTable {
    pub axis: String,
    pub base_config_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis_value,stationarity_mean,stationarity_stderr,final_f_mean\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                crate::trace::fmt_f64(r.axis_value),
                crate::trace::fmt_f64(r.stationarity_mean),
                crate::trace::fmt_f64(r.stationarity_stderr),
                crate::trace::fmt_f64(r.final_f_mean),
            ));
        }
        out
    }
}

/// Run the cross product (axis values x seeds) and aggregate per axis value.
pub fn sweep(
    cfg: &RunConfigFile,
    axis: SweepAxis,
    values: &[f64],
    jobs: usize,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Config("sweep requires at least one axis value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let sub = apply_axis(cfg, axis, v)?;
        let runs = execute_all(&sub, jobs)?;
        let per_seed: Vec<SeedSummary> = runs
            .iter()
            .map(|r| SeedSummary {
                seed: r.seed,
                stationarity: r.trace.stationarity(1.0),
                final_f: r.final_f,
            })
            .collect();
        let stats: Vec<f64> = per_seed.iter().map(|s| s.stationarity).collect();
        let finals: Vec<f64> = per_seed.iter().map(|s| s.final_f).collect();
        let (stationarity_mean, stationarity_stderr) = mean_stderr(&stats);
        let (final_f_mean, _) = mean_stderr(&finals);
        rows.push(SweepRow {
            axis_value: v,
            config_hash: sub.hash(),
            per_seed,
            stationarity_mean,
            stationarity_stderr,
            final_f_mean,
        });
    }
    Ok(SweepTable { axis: axis.name().into(), base_config_hash: cfg.hash(), rows })
}

//! Command-line driver: run configs, parameter sweeps, verification suites,
//! and schedule-exponent lookup.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical divergence,
//! 3 failed verification check.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qclab::config::RunConfigFile;
use qclab::error::Error;
use qclab::runner::{run_to_files, sweep, SweepAxis};
use qclab::schedule::schedule_exponents;
use qclab::trace::write_atomic;
use qclab::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "qclab", version, about = "Quantile-clipped SGD laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SeedArgs {
    /// Use seeds 0..N instead of the config's seed list.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<usize>,
    /// Comma-separated explicit seed list overriding the config.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run configuration; one trace CSV per seed plus a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output.dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        seeds: SeedArgs,
        /// Worker pool size (0 = automatic).
        #[arg(long, env = "QCLAB_JOBS", default_value_t = 0)]
        jobs: usize,
    },
    /// Run the config across an axis of values and tabulate the results.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Axis: gamma, p, B, sigma_dp, or T.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        seeds: SeedArgs,
        #[arg(long, env = "QCLAB_JOBS", default_value_t = 0)]
        jobs: usize,
    },
    /// Run a verification suite against the built-in canonical configs.
    Verify {
        /// Suite: lemma1, lemma2, theorem1, theorem2, bias_example, or all.
        #[arg(default_value = "all")]
        suite: String,
        /// Directory for the JSON report.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, env = "QCLAB_JOBS", default_value_t = 0)]
        jobs: usize,
    },
    /// Print the jointly optimal schedule exponents for moment order q.
    Schedule {
        #[arg(long)]
        q: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Diverged { .. } => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(path: &PathBuf, seeds: &SeedArgs) -> Result<RunConfigFile, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfigFile::from_json(&text)?;
    if let Some(n) = seeds.seeds {
        if n == 0 {
            return Err(Error::Config("--seeds must be at least 1".into()));
        }
        cfg.seeds = (0..n as u64).collect();
    } else if let Some(list) = &seeds.seed_list {
        if list.is_empty() {
            return Err(Error::Config("--seed-list must name at least one seed".into()));
        }
        cfg.seeds = list.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config, out, seeds, jobs } => {
            let cfg = load_config(&config, &seeds)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            let files = run_to_files(&cfg, &out_dir, jobs)?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, axis, values, out, seeds, jobs } => {
            let cfg = load_config(&config, &seeds)?;
            let axis: SweepAxis = axis.parse()?;
            let table = sweep(&cfg, axis, &values, jobs)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
            std::fs::create_dir_all(&out_dir)?;
            let csv_path = out_dir.join(format!("sweep_{}.csv", table.axis));
            write_atomic(&csv_path, &table.to_csv())?;
            let json_path = out_dir.join(format!("sweep_{}.json", table.axis));
            let mut text = serde_json::to_string_pretty(&table).map_err(Error::from)?;
            text.push('\n');
            write_atomic(&json_path, &text)?;
            print!("{}", table.to_csv());
            println!("wrote {}", csv_path.display());
            println!("wrote {}", json_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite, out, jobs } => {
            let suite: Suite = suite.parse()?;
            let report = run_suite(suite, jobs)?;
            for check in &report.checks {
                println!("{}", check.line());
            }
            std::fs::create_dir_all(&out)?;
            let path = out.join(format!("verify_{}.json", report.suite));
            let mut text = serde_json::to_string_pretty(&report)
                .map_err(Error::from)?;
            text.push('\n');
            write_atomic(&path, &text)?;
            println!("wrote {}", path.display());
            if report.all_pass {
                println!("verify {}: all {} checks passed", report.suite, report.checks.len());
                Ok(ExitCode::SUCCESS)
            } else {
                let failed = report.checks.iter().filter(|c| !c.pass).count();
                println!(
                    "verify {}: {failed} of {} checks FAILED",
                    report.suite,
                    report.checks.len()
                );
                Ok(ExitCode::from(3))
            }
        }
        Command::Schedule { q } => {
            let (theta, nu) = schedule_exponents(q)?;
            println!("q = {q}");
            println!("theta = {theta:.12} (step law gamma_t = gamma0 * (t+1)^{:.12})", theta - 1.0);
            println!("nu = {nu:.12} (clipped-mass law h_t = h0 * (t+1)^{nu:.12}, p_t = 1 - h_t)");
            Ok(ExitCode::SUCCESS)
        }
    }
}

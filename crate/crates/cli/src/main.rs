use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use wntorus::simulate::{random_correlation, summarize, CorrelationSpec};
use wntorus::{run_experiment, ExperimentConfig, WnError};

mod data;
mod fit;

#[derive(Debug, Parser)]
#[command(name = "wntorus", version, about = "Wrapped normal models for data on the torus")]
struct Cli {
    /// Worker threads for the estimators (defaults to one per core).
    #[arg(long, global = true, env = "WNTORUS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a wrapped normal model to a CSV file and print the estimate as JSON.
    Fit(fit::FitArgs),
    /// Run a Monte Carlo experiment described by a key = value file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// CSV report, one row per fit.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Print a random correlation matrix with a fixed condition number.
    Gencor {
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 20.0)]
        cn: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Failure carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid input, exit 1.
    Input(anyhow::Error),
    /// The data do not support an estimate, exit 2.
    Estimation(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Input(e)
    }
}

impl From<WnError> for CliError {
    fn from(e: WnError) -> Self {
        match e {
            WnError::DegenerateStatistic(_)
            | WnError::DegenerateInit(_)
            | WnError::SingularCovariance
            | WnError::NumericalFailure { .. }
            | WnError::Degenerate(_)
            | WnError::CorrelationNotConverged { .. } => CliError::Estimation(e.into()),
            _ => CliError::Input(e.into()),
        }
    }
}

fn simulate(config: &PathBuf, output: &PathBuf) -> Result<(), CliError> {
    let text = fs::read_to_string(config).with_context(|| format!("cannot read {}", config.display()))?;
    let cfg = ExperimentConfig::parse(&text).map_err(|e| anyhow::anyhow!("{}: {e}", config.display()))?;
    let report = run_experiment(&cfg)?;
    let file = File::create(output).with_context(|| format!("cannot write {}", output.display()))?;
    report.write_csv(BufWriter::new(file))?;
    let mut out = io::stdout().lock();
    for cell in summarize(&report) {
        writeln!(out, "{cell}").context("writing summary")?;
    }
    Ok(())
}

fn gencor(p: usize, cn: f64, seed: u64) -> Result<(), CliError> {
    let spec = CorrelationSpec::new(p, cn);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let r = random_correlation(&spec, &mut rng)?;
    let eig = r.symmetric_eigenvalues();
    let cond = eig.max() / eig.min();
    let mut out = io::stdout().lock();
    writeln!(out, "# condition_number {cond}").context("writing matrix")?;
    for i in 0..p {
        let line: Vec<String> = r.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(",")).context("writing matrix")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Fit(args) => fit::run(args),
        Command::Simulate { config, output } => simulate(config, output),
        Command::Gencor { p, cn, seed } => gencor(*p, *cn, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Estimation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

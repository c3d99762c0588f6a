use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::Context;
use nalgebra::DMatrix;
use serde::Serialize;
use wntorus::direct::OptimizerControl;
use wntorus::em::posterior_moments;
use wntorus::mixed::{mixed_from_params, MixedParams};
use wntorus::{
    fit_cem, fit_em, fit_mixed_cem, fit_mixed_em, initial_estimate, log_likelihood, FitResult, LatticeConfig,
    Method, MixedSample, StopReason, TorusSample,
};

use crate::data;
use crate::CliError;

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    /// CSV file, one observation per row, angles in radians.
    pub input: PathBuf,
    /// Estimator: em, cem, direct or cem-then-em.
    #[arg(long, default_value = "em")]
    pub method: Method,
    /// Lattice half-width.
    #[arg(short = 'J', long = "lattice", default_value_t = LatticeConfig::DEFAULT_J)]
    pub j: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Columns (names or zero-based indices) holding linear, non-angular variables.
    #[arg(long)]
    pub linear_columns: Option<String>,
    /// Read angles in degrees.
    #[arg(long)]
    pub degrees: bool,
    /// Write the JSON result here instead of standard output.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// For cem, write the unwrapped points to this CSV file.
    #[arg(long)]
    pub unwrapped_output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct MixedJson {
    p_linear: usize,
    mu_linear: Vec<f64>,
    sigma12: Vec<Vec<f64>>,
    sigma22: Vec<Vec<f64>>,
    repaired: bool,
}

#[derive(Debug, Serialize)]
struct FitJson {
    method: String,
    p: usize,
    n: usize,
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    loglik: f64,
    iterations: usize,
    converged: bool,
    reason: String,
    warnings: Vec<String>,
    coefficients: Option<Vec<Vec<i64>>>,
    unwrapped_path: Option<String>,
    mixed: Option<MixedJson>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn mixed_json(params: &MixedParams, repaired: bool) -> MixedJson {
    MixedJson {
        p_linear: params.mu2.len(),
        mu_linear: params.mu2.clone(),
        sigma12: rows(&params.sigma12),
        sigma22: rows(&params.sigma22),
        repaired,
    }
}

fn write_unwrapped(path: &PathBuf, x: &DMatrix<f64>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for i in 0..x.nrows() {
        w.write_record(x.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

struct Estimate {
    fit: FitResult,
    coefficients: Option<Vec<Vec<i64>>>,
    unwrapped: Option<DMatrix<f64>>,
    mixed: Option<MixedJson>,
}

fn estimate(args: &FitArgs, sample: &TorusSample, linear: Option<DMatrix<f64>>) -> Result<Estimate, CliError> {
    let config = LatticeConfig::new(args.j);
    let ctrl = wntorus::EmControl { max_iter: args.max_iter, tol: args.tol, ..Default::default() };
    let init = initial_estimate(sample)?.params;

    if let Some(linear) = linear {
        let mixed_sample = MixedSample::new(sample.clone(), linear.clone())?;
        let (fit, mixed) = match args.method {
            Method::Em => {
                let r = fit_mixed_em(&mixed_sample, config, ctrl)?;
                (r.torus, mixed_json(&r.params, r.repaired))
            }
            Method::Cem => {
                let r = fit_mixed_cem(&mixed_sample, config, ctrl)?;
                (r.torus, mixed_json(&r.params, r.repaired))
            }
            other => {
                let fit = wntorus::simulate::fit_with(other, sample, &init, config, ctrl, OptimizerControl::default())?;
                let moments = posterior_moments(sample, &fit.params, config)?;
                let completed = DMatrix::from_fn(sample.n(), sample.p(), |i, k| moments[i].mean[k]);
                let params = mixed_from_params(&fit.params, &completed, &linear)?;
                (fit, mixed_json(&params, false))
            }
        };
        return Ok(Estimate { fit, coefficients: None, unwrapped: None, mixed: Some(mixed) });
    }

    Ok(match args.method {
        Method::Cem => {
            let r = fit_cem(sample, &init, config, ctrl)?;
            Estimate { fit: r.fit, coefficients: Some(r.coefficients.j_hat), unwrapped: Some(r.unwrapped), mixed: None }
        }
        Method::Em => Estimate { fit: fit_em(sample, &init, config, ctrl)?, coefficients: None, unwrapped: None, mixed: None },
        other => Estimate {
            fit: wntorus::simulate::fit_with(other, sample, &init, config, ctrl, OptimizerControl::default())?,
            coefficients: None,
            unwrapped: None,
            mixed: None,
        },
    })
}

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let table = data::read_table(&args.input)?;
    let linear_columns = match &args.linear_columns {
        Some(spec) => data::resolve_columns(spec, &table)?,
        None => Vec::new(),
    };
    let ingested = data::ingest(&table, &linear_columns, args.degrees)?;
    let mut warnings = ingested.warnings;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let sample = ingested.torus;
    let est = estimate(args, &sample, ingested.linear)?;

    let fit = &est.fit;
    if !fit.converged {
        warnings.push(format!("stopped after {} iterations without meeting the tolerance", fit.iterations));
    }
    if fit.reason == StopReason::Degenerate {
        warnings.push("a ridge was added to keep the covariance positive definite".into());
    }
    let mut unwrapped_path = None;
    if let Some(path) = &args.unwrapped_output {
        match &est.unwrapped {
            Some(x) => {
                write_unwrapped(path, x)?;
                unwrapped_path = Some(path.display().to_string());
            }
            None => warnings.push("--unwrapped-output only applies to cem without linear columns".into()),
        }
    }

    let loglik = log_likelihood(&sample, &fit.params, LatticeConfig::new(args.j))?;
    let result = FitJson {
        method: args.method.to_string(),
        p: sample.p(),
        n: sample.n(),
        mu: fit.params.mu().as_slice().to_vec(),
        sigma: rows(fit.params.sigma()),
        loglik,
        iterations: fit.iterations,
        converged: fit.converged,
        reason: fit.reason.as_str().to_string(),
        warnings,
        coefficients: est.coefficients,
        unwrapped_path,
        mixed: est.mixed,
    };
    let text = serde_json::to_string_pretty(&result).context("serializing result")?;
    match &args.output {
        Some(path) => {
            let mut f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
            writeln!(f, "{text}").context("writing result")?;
        }
        None => writeln!(io::stdout(), "{text}").context("writing result")?,
    }
    Ok(())
}

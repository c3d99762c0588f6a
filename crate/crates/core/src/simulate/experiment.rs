use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{random_correlation, sample_wn, scale_to_covariance, scatter_divergence, wilks_lambda, CorrelationSpec};
use super::MetricsReport;
use crate::cem::fit_cem;
use crate::circular::{angle_separation, initial_params, TorusSample};
use crate::direct::{fit_direct, OptimizerControl};
use crate::em::{fit_em, EmControl, FitResult, StopReason};
use crate::error::{Result, WnError};
use crate::model::{LatticeConfig, WnParams};

/// Estimator selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Em,
    Cem,
    Direct,
    CemThenEm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Em, Method::Cem, Method::Direct, Method::CemThenEm];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Em => "em",
            Method::Cem => "cem",
            Method::Direct => "direct",
            Method::CemThenEm => "cem-then-em",
        }
    }

    pub fn valid_names() -> String {
        Method::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = WnError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| {
                WnError::InvalidArgument(format!("unknown method '{}'; valid methods: {}", s.trim(), Method::valid_names()))
            })
    }
}

/// Runs one estimator from `init`.
pub fn fit_with(
    method: Method,
    sample: &TorusSample,
    init: &WnParams,
    config: LatticeConfig,
    em: EmControl,
    direct: OptimizerControl,
) -> Result<FitResult> {
    match method {
        Method::Em => fit_em(sample, init, config, em),
        Method::Cem => Ok(fit_cem(sample, init, config, em)?.fit),
        Method::Direct => fit_direct(sample, init, config, direct),
        Method::CemThenEm => {
            let first = fit_cem(sample, init, config, em)?.fit;
            let mut second = fit_em(sample, &first.params, config, em)?;
            second.iterations += first.iterations;
            second.evaluations += first.evaluations;
            Ok(second)
        }
    }
}

/// A dispersion level and the label it was given in the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaLevel {
    pub label: String,
    pub value: f64,
}

impl FromStr for SigmaLevel {
    type Err = WnError;

    fn from_str(s: &str) -> Result<Self> {
        let label = s.trim().to_string();
        let value = match label.as_str() {
            "pi/8" => PI / 8.0,
            "pi/4" => PI / 4.0,
            "pi/2" => PI / 2.0,
            "pi" => PI,
            "3pi/2" => 1.5 * PI,
            "2pi" => 2.0 * PI,
            other => other
                .parse::<f64>()
                .map_err(|_| WnError::InvalidArgument(format!("cannot read sigma value '{other}'")))?,
        };
        if !(value > 0.0) || !value.is_finite() {
            return Err(WnError::InvalidArgument(format!("sigma must be positive, got '{label}'")));
        }
        Ok(SigmaLevel { label, value })
    }
}

/// Factor grid and settings of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `(p, n)` cells; the cartesian product of the `p` and `n` lists unless given explicitly.
    pub pairs: Vec<(usize, usize)>,
    pub sigmas: Vec<SigmaLevel>,
    pub replications: usize,
    pub cn: f64,
    pub methods: Vec<Method>,
    pub j: usize,
    pub seed: u64,
    /// Also fit every method from the true parameters.
    pub from_truth: bool,
    pub em: EmControl,
    pub direct: OptimizerControl,
    /// Record wall-clock time per fit. Timings make the report non-reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pairs: vec![(2, 100)],
            sigmas: vec![SigmaLevel { label: "pi/4".into(), value: PI / 4.0 }],
            replications: 10,
            cn: 20.0,
            methods: vec![Method::Em],
            j: LatticeConfig::DEFAULT_J,
            seed: 1,
            from_truth: false,
            em: EmControl::default(),
            direct: OptimizerControl::default(),
            timing: false,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>().map_err(|_| WnError::InvalidArgument(format!("bad value '{v}' for {key}"))))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| WnError::InvalidArgument(format!("bad value '{}' for {key}", value.trim())))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(WnError::InvalidArgument(format!("bad value '{other}' for {key}"))),
    }
}

impl ExperimentConfig {
    /// Reads flat `key = value` lines. Lists are comma separated, `#` starts a comment.
    ///
    /// Keys: `p`, `n`, `pairs` (as `p:n,p:n`), `sigma`, `reps`, `cn`, `methods`,
    /// `J`, `seed`, `from_truth`, `max_iter`, `tol`, `max_evals`, `max_dim`, `timing`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let (mut ps, mut ns, mut pairs) = (None, None, None);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| WnError::InvalidArgument(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            match key {
                "p" => ps = Some(parse_list::<usize>(key, value)?),
                "n" => ns = Some(parse_list::<usize>(key, value)?),
                "pairs" => {
                    let parsed = value
                        .split(',')
                        .map(|pair| {
                            let (p, n) = pair
                                .split_once(':')
                                .ok_or_else(|| WnError::InvalidArgument(format!("pair '{}' is not p:n", pair.trim())))?;
                            Ok((parse_one(key, p)?, parse_one(key, n)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    pairs = Some(parsed);
                }
                "sigma" => cfg.sigmas = value.split(',').map(str::parse).collect::<Result<Vec<_>>>()?,
                "reps" => cfg.replications = parse_one(key, value)?,
                "cn" => cfg.cn = parse_one(key, value)?,
                "methods" => cfg.methods = value.split(',').map(str::parse).collect::<Result<Vec<_>>>()?,
                "J" | "j" => cfg.j = parse_one(key, value)?,
                "seed" => cfg.seed = parse_one(key, value)?,
                "from_truth" => cfg.from_truth = parse_bool(key, value)?,
                "max_iter" => cfg.em.max_iter = parse_one(key, value)?,
                "tol" => cfg.em.tol = parse_one(key, value)?,
                "max_evals" => cfg.direct.max_evals = parse_one(key, value)?,
                "max_dim" => cfg.direct.max_dim = parse_one(key, value)?,
                "timing" => cfg.timing = parse_bool(key, value)?,
                other => return Err(WnError::InvalidArgument(format!("unknown key '{other}'"))),
            }
        }
        if let Some(pairs) = pairs {
            if ps.is_some() || ns.is_some() {
                return Err(WnError::InvalidArgument("give either pairs or p and n, not both".into()));
            }
            cfg.pairs = pairs;
        } else if ps.is_some() || ns.is_some() {
            let ps = ps.unwrap_or_else(|| vec![2]);
            let ns = ns.unwrap_or_else(|| vec![100]);
            cfg.pairs = ps.iter().flat_map(|&p| ns.iter().map(move |&n| (p, n))).collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() || self.sigmas.is_empty() || self.methods.is_empty() {
            return Err(WnError::InvalidArgument("p, n, sigma and methods need at least one entry".into()));
        }
        if self.replications == 0 {
            return Err(WnError::InvalidArgument("reps must be at least 1".into()));
        }
        if !(self.cn > 1.0) || !self.cn.is_finite() {
            return Err(WnError::InvalidArgument(format!("cn must exceed 1, got {}", self.cn)));
        }
        if self.em.max_iter == 0 || !(self.em.tol > 0.0) {
            return Err(WnError::InvalidArgument("max_iter must be >= 1 and tol > 0".into()));
        }
        for &(p, n) in &self.pairs {
            if p == 0 || n < 2 {
                return Err(WnError::InvalidArgument(format!("cell p={p}, n={n}: need p >= 1 and n >= 2")));
            }
            if self.methods.contains(&Method::Direct) && p > self.direct.max_dim {
                return Err(WnError::DimensionGuard { p, limit: self.direct.max_dim });
            }
            LatticeConfig::new(self.j).row_count(p)?;
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(usize, usize, &SigmaLevel)> {
        self.pairs
            .iter()
            .flat_map(|&(p, n)| self.sigmas.iter().map(move |s| (p, n, s)))
            .collect()
    }
}

/// One fit of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub p: usize,
    pub n: usize,
    pub sigma: String,
    /// Method name, suffixed with `-T` when started from the truth.
    pub method: String,
    pub replicate: usize,
    pub metrics: Option<MetricsReport>,
    pub converged: bool,
    pub iterations: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ResultRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl ExperimentReport {
    pub const HEADER: [&'static str; 12] = [
        "p",
        "n",
        "sigma",
        "method",
        "replicate",
        "wilks",
        "angle_sep",
        "scatter_div",
        "runtime_seconds",
        "converged",
        "iterations",
        "error",
    ];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| WnError::InvalidArgument(format!("writing report: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::HEADER).map_err(io)?;
        for r in &self.rows {
            let m = r.metrics;
            w.write_record([
                r.p.to_string(),
                r.n.to_string(),
                r.sigma.clone(),
                r.method.clone(),
                r.replicate.to_string(),
                fmt_opt(m.map(|m| m.wilks)),
                fmt_opt(m.map(|m| m.angle_sep)),
                fmt_opt(m.map(|m| m.scatter_div)),
                fmt_opt(m.and_then(|m| m.runtime_seconds)),
                r.converged.to_string(),
                r.iterations.to_string(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| WnError::InvalidArgument(format!("writing report: {e}")))?;
        Ok(())
    }
}

/// Medians over the successful replicates of one `(p, n, sigma, method)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub p: usize,
    pub n: usize,
    pub sigma: String,
    pub method: String,
    pub median_wilks: f64,
    pub median_angle_sep: f64,
    pub median_scatter_div: f64,
    pub fits: usize,
    pub failures: usize,
}

impl fmt::Display for CellSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "p={} n={} sigma={} method={}: median wilks={:.6} AS={:.6} delta={:.6} ({} fits, {} failed)",
            self.p,
            self.n,
            self.sigma,
            self.method,
            self.median_wilks,
            self.median_angle_sep,
            self.median_scatter_div,
            self.fits,
            self.failures
        )
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-cell medians in order of first appearance.
pub fn summarize(report: &ExperimentReport) -> Vec<CellSummary> {
    let mut keys: Vec<(usize, usize, &str, &str)> = Vec::new();
    for r in &report.rows {
        let key = (r.p, r.n, r.sigma.as_str(), r.method.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(p, n, sigma, method)| {
            let rows: Vec<&ResultRow> = report
                .rows
                .iter()
                .filter(|r| r.p == p && r.n == n && r.sigma == sigma && r.method == method)
                .collect();
            let ok: Vec<MetricsReport> = rows.iter().filter_map(|r| r.metrics).collect();
            CellSummary {
                p,
                n,
                sigma: sigma.to_string(),
                method: method.to_string(),
                median_wilks: median(ok.iter().map(|m| m.wilks).collect()),
                median_angle_sep: median(ok.iter().map(|m| m.angle_sep).collect()),
                median_scatter_div: median(ok.iter().map(|m| m.scatter_div).collect()),
                fits: ok.len(),
                failures: rows.len() - ok.len(),
            }
        })
        .collect()
}

fn replicate_rng(seed: u64, cell: usize, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((cell as u64) << 32) | replicate as u64);
    rng
}

struct Job<'a> {
    cell: usize,
    p: usize,
    n: usize,
    sigma: &'a SigmaLevel,
    replicate: usize,
}

fn draw_truth(job: &Job<'_>, cn: f64, rng: &mut ChaCha8Rng) -> Result<WnParams> {
    let r = if job.p == 1 {
        DMatrix::identity(1, 1)
    } else {
        random_correlation(&CorrelationSpec::new(job.p, cn), rng)?
    };
    WnParams::new(&vec![0.0; job.p], scale_to_covariance(&r, job.sigma.value)?)
}

fn run_job(cfg: &ExperimentConfig, job: &Job<'_>) -> Vec<ResultRow> {
    let config = LatticeConfig::new(cfg.j);
    let mut starts: Vec<(Method, bool)> = cfg.methods.iter().map(|&m| (m, false)).collect();
    if cfg.from_truth {
        starts.extend(cfg.methods.iter().map(|&m| (m, true)));
    }
    let row = |method: Method, truth: bool| ResultRow {
        p: job.p,
        n: job.n,
        sigma: job.sigma.label.clone(),
        method: if truth { format!("{method}-T") } else { method.to_string() },
        replicate: job.replicate,
        metrics: None,
        converged: false,
        iterations: 0,
        error: None,
    };
    let failed = |e: WnError| -> Vec<ResultRow> {
        starts
            .iter()
            .map(|&(m, t)| ResultRow { error: Some(e.to_string()), ..row(m, t) })
            .collect()
    };

    let mut rng = replicate_rng(cfg.seed, job.cell, job.replicate);
    let truth = match draw_truth(job, cfg.cn, &mut rng) {
        Ok(t) => t,
        Err(e) => return failed(e),
    };
    let sample = match sample_wn(&truth, job.n, &mut rng) {
        Ok(s) => s,
        Err(e) => return failed(e),
    };
    let init = initial_params(&sample);

    starts
        .iter()
        .map(|&(method, from_truth)| {
            let mut out = row(method, from_truth);
            let start = if from_truth { Ok(truth.clone()) } else { init.clone() };
            let clock = Instant::now();
            let fitted = start.and_then(|s| fit_with(method, &sample, &s, config, cfg.em, cfg.direct));
            let elapsed = clock.elapsed().as_secs_f64();
            let scored = fitted.and_then(|fit| {
                let metrics = MetricsReport {
                    wilks: wilks_lambda(&sample, &fit.params, &truth, config)?,
                    angle_sep: angle_separation(fit.params.mu().as_slice(), truth.mu().as_slice())?,
                    scatter_div: scatter_divergence(fit.params.sigma(), truth.sigma())?,
                    runtime_seconds: cfg.timing.then_some(elapsed),
                };
                Ok((fit, metrics))
            });
            match scored {
                Ok((fit, metrics)) => {
                    out.metrics = Some(metrics);
                    out.converged = fit.converged;
                    out.iterations = fit.iterations;
                    if fit.reason == StopReason::Degenerate {
                        out.error = Some("covariance ridge applied".into());
                    }
                }
                Err(e) => out.error = Some(e.to_string()),
            }
            out
        })
        .collect()
}

/// Runs every cell and replicate of `cfg`.
///
/// Each replicate draws its own correlation matrix and sample from a random
/// stream keyed by cell and replicate index, so the report does not depend on
/// scheduling or thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let jobs: Vec<Job<'_>> = cfg
        .cells()
        .into_iter()
        .enumerate()
        .flat_map(|(cell, (p, n, sigma))| {
            (0..cfg.replications).map(move |replicate| Job { cell, p, n, sigma, replicate })
        })
        .collect();
    let rows = jobs.par_iter().map(|job| run_job(cfg, job)).collect::<Vec<_>>().into_iter().flatten().collect();
    Ok(ExperimentReport { rows })
}

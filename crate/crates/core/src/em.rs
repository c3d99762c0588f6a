//! Variance-decomposition EM.
//!
//! Each iteration recenters the observations about the current mean, weights
//! every lattice shift `ỹ_i + 2πJ_r` by its posterior probability, and then
//! sets
//!
//! * `μ ← (1/n) Σ μ̃_i`
//! * `Σ ← (1/n) Σ Σ̃_i + C`
//!
//! where `μ̃_i`, `Σ̃_i` are the posterior mean and covariance of observation
//! `i` over the lattice and `C` is the covariance (divisor n) of the `μ̃_i`.
//! By the law of total variance this is the covariance of the whole weighted
//! point cloud, i.e. the exact maximizer of the expected complete
//! log-likelihood.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::circular::{AngleVector, TorusSample};
use crate::error::{Result, WnError};
use crate::linalg;
use crate::model::{Lattice, LatticeConfig, NormalKernel, WnParams, WrappedKernel};

/// Relative size of the ridge added to a numerically singular M-step covariance.
pub const RIDGE: f64 = 1e-10;

/// Posterior weights of the lattice rows for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepWeights {
    /// Recentered representative `ỹ` the weights refer to.
    pub centered: Vec<f64>,
    /// One weight per lattice row, in lattice order; sums to one.
    pub weights: Vec<f64>,
    /// Log of the truncated wrapped density at the observation.
    pub log_density: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The stopping criterion was met.
    TolReached,
    /// The classification did not change between two iterations.
    FixedPoint,
    MaxIter,
    /// A covariance ridge had to be added on the way.
    Degenerate,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::TolReached => "tol-reached",
            StopReason::FixedPoint => "fixed-point",
            StopReason::MaxIter => "max-iter",
            StopReason::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    /// Absolute change of the log-likelihood.
    LogLikelihood,
    /// Largest absolute change of any entry of μ or Σ.
    Parameters,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmControl {
    pub max_iter: usize,
    pub tol: f64,
    pub criterion: Convergence,
}

impl Default for EmControl {
    fn default() -> Self {
        EmControl { max_iter: 500, tol: 1e-8, criterion: Convergence::LogLikelihood }
    }
}

/// Outcome of an iterative fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: WnParams,
    /// Objective after every iteration, starting with the value at the initial point.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    /// Objective evaluations (E-steps for EM, likelihood calls for direct maximization).
    pub evaluations: usize,
    pub converged: bool,
    pub reason: StopReason,
}

impl FitResult {
    /// Final value of the traced objective.
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

/// Posterior lattice weights for one observation.
pub fn e_step(y: &AngleVector, params: &WnParams, config: LatticeConfig) -> Result<EStepWeights> {
    if y.len() != params.p() {
        return Err(WnError::DimensionMismatch { expected: params.p(), found: y.len() });
    }
    let lattice = config.lattice(params.p())?;
    let kernel = WrappedKernel::new(params.normal_kernel()?, &lattice);
    let mut s = kernel.scratch();
    let lse = kernel.log_terms(y.as_slice(), &mut s);
    let weights = s.terms.iter().map(|t| (t - lse).exp()).collect();
    Ok(EStepWeights { centered: s.centered, weights, log_density: lse })
}

/// Weighted mean and covariance (weights already normalized) of the points
/// `y_tilde + 2πJ_r`.
pub fn conditional_moments(
    y_tilde: &[f64],
    weights: &EStepWeights,
    config: LatticeConfig,
) -> Result<ConditionalMoments> {
    let p = y_tilde.len();
    let lattice = config.lattice(p)?;
    if weights.weights.len() != lattice.len() {
        return Err(WnError::DimensionMismatch { expected: lattice.len(), found: weights.weights.len() });
    }
    let mut mean = vec![0.0; p];
    let mut cov = vec![0.0; p * p];
    lattice_moments(&lattice, &weights.weights, y_tilde, &mut mean, &mut cov);
    Ok(ConditionalMoments {
        mean: DVector::from_vec(mean),
        cov: DMatrix::from_row_slice(p, p, &cov),
    })
}

/// Two-pass moments of the lattice cloud around `y`.
fn lattice_moments(lattice: &Lattice, w: &[f64], y: &[f64], mean: &mut [f64], cov: &mut [f64]) {
    let p = y.len();
    let mut offset = vec![0.0; p];
    for (row, &wr) in lattice.iter().zip(w) {
        if wr == 0.0 {
            continue;
        }
        for (o, &j) in offset.iter_mut().zip(row) {
            *o += wr * j as f64;
        }
    }
    cov.iter_mut().for_each(|c| *c = 0.0);
    let mut d = vec![0.0; p];
    for (row, &wr) in lattice.iter().zip(w) {
        if wr == 0.0 {
            continue;
        }
        for k in 0..p {
            d[k] = row[k] as f64 - offset[k];
        }
        for a in 0..p {
            let wa = wr * d[a];
            for b in a..p {
                cov[a * p + b] += wa * d[b];
            }
        }
    }
    let scale = TAU * TAU;
    for a in 0..p {
        mean[a] = y[a] + TAU * offset[a];
        for b in a..p {
            let v = cov[a * p + b] * scale;
            cov[a * p + b] = v;
            cov[b * p + a] = v;
        }
    }
}

/// Per-observation quantities of one E-step.
#[derive(Debug, Clone)]
pub(crate) struct Posterior {
    pub(crate) log_density: f64,
    pub(crate) mean: Vec<f64>,
    /// full p x p, row-major
    pub(crate) cov: Vec<f64>,
}

pub(crate) fn posteriors(kernel: &WrappedKernel<'_>, sample: &TorusSample) -> Vec<Posterior> {
    let p = sample.p();
    (0..sample.n())
        .into_par_iter()
        .map_init(
            || (kernel.scratch(), vec![0.0; kernel.lattice().len()]),
            |(s, w), i| {
                let lse = kernel.log_terms(sample.row(i), s);
                for (wr, t) in w.iter_mut().zip(&s.terms) {
                    *wr = (t - lse).exp();
                }
                let mut mean = vec![0.0; p];
                let mut cov = vec![0.0; p * p];
                lattice_moments(kernel.lattice(), w, &s.centered, &mut mean, &mut cov);
                Posterior { log_density: lse, mean, cov }
            },
        )
        .collect()
}

/// Posterior moments of every observation under `params`.
pub fn posterior_moments(
    sample: &TorusSample,
    params: &WnParams,
    config: LatticeConfig,
) -> Result<Vec<ConditionalMoments>> {
    if sample.p() != params.p() {
        return Err(WnError::DimensionMismatch { expected: params.p(), found: sample.p() });
    }
    let p = sample.p();
    let lattice = config.lattice(p)?;
    let kernel = WrappedKernel::new(params.normal_kernel()?, &lattice);
    Ok(posteriors(&kernel, sample)
        .into_iter()
        .map(|post| ConditionalMoments {
            mean: DVector::from_vec(post.mean),
            cov: DMatrix::from_row_slice(p, p, &post.cov),
        })
        .collect())
}

/// Result of the M-step before canonicalizing the mean.
#[derive(Debug, Clone)]
pub struct MStepUpdate {
    /// Average conditional mean, not wrapped.
    pub mean: Vec<f64>,
    pub sigma: DMatrix<f64>,
    /// Whether a ridge was added to keep `sigma` positive definite.
    pub ridged: bool,
}

impl MStepUpdate {
    pub fn params(&self) -> Result<WnParams> {
        WnParams::new(&self.mean, self.sigma.clone())
    }
}

/// Averages within-covariances and adds the between-covariance of the
/// conditional means.
pub fn m_step(moments: &[ConditionalMoments]) -> Result<MStepUpdate> {
    let first = moments.first().ok_or(WnError::Empty("conditional moments"))?;
    let p = first.mean.len();
    let mut means = Vec::with_capacity(moments.len() * p);
    let mut within = vec![0.0; p * p];
    for m in moments {
        if m.mean.len() != p || m.cov.nrows() != p {
            return Err(WnError::DimensionMismatch { expected: p, found: m.mean.len() });
        }
        means.extend(m.mean.iter());
        for a in 0..p {
            for b in 0..p {
                within[a * p + b] += m.cov[(a, b)];
            }
        }
    }
    Ok(finish_m_step(&means, &within, moments.len(), p))
}

fn finish_m_step(means: &[f64], within_sum: &[f64], n: usize, p: usize) -> MStepUpdate {
    let (mean, between) = linalg::mean_and_population_cov(means, n, p);
    let mut sigma = DMatrix::from_row_slice(p, p, within_sum) / n as f64 + between;
    linalg::symmetrize(&mut sigma);
    let ridged = apply_ridge(&mut sigma);
    MStepUpdate { mean: mean.iter().copied().collect(), sigma, ridged }
}

/// Lifts the smallest eigenvalue to `RIDGE * max(trace / p, 1)` when it falls below it.
pub(crate) fn apply_ridge(sigma: &mut DMatrix<f64>) -> bool {
    let p = sigma.nrows();
    let floor = RIDGE * (sigma.trace() / p as f64).max(1.0);
    let lmin = if sigma.iter().all(|v| v.is_finite()) {
        linalg::eigenvalues_sorted(sigma)[0]
    } else {
        f64::NEG_INFINITY
    };
    if lmin >= floor && linalg::cholesky(sigma).is_ok() {
        return false;
    }
    let lift = if lmin.is_finite() { floor - lmin.min(0.0) } else { floor };
    for k in 0..p {
        sigma[(k, k)] += lift;
    }
    true
}

/// Runs variance-decomposition EM from `init`.
///
/// ```
/// use wntorus::{fit_em, initial_params, EmControl, LatticeConfig, TorusSample};
/// let sample = TorusSample::from_rows(&[[0.1], [6.1], [0.4], [5.9], [0.2]]).unwrap();
/// let init = initial_params(&sample).unwrap();
/// let fit = fit_em(&sample, &init, LatticeConfig::default(), EmControl::default()).unwrap();
/// assert!(fit.converged);
/// ```
pub fn fit_em(sample: &TorusSample, init: &WnParams, config: LatticeConfig, ctrl: EmControl) -> Result<FitResult> {
    let p = sample.p();
    if init.p() != p {
        return Err(WnError::DimensionMismatch { expected: p, found: init.p() });
    }
    if ctrl.max_iter == 0 || !(ctrl.tol > 0.0) {
        return Err(WnError::InvalidArgument("max_iter must be >= 1 and tol > 0".into()));
    }
    let n = sample.n();
    let lattice = config.lattice(p)?;

    let mut mean = init.mu().as_slice().to_vec();
    let mut sigma = init.sigma().clone();
    let step = |mean: &[f64], sigma: &DMatrix<f64>, iteration: usize| -> Result<(f64, Vec<Posterior>)> {
        let kernel = WrappedKernel::new(NormalKernel::new(mean, sigma)?, &lattice);
        let posts = posteriors(&kernel, sample);
        let ll: f64 = posts.iter().map(|q| q.log_density).sum();
        if !ll.is_finite() {
            return Err(WnError::NumericalFailure { iteration });
        }
        Ok((ll, posts))
    };

    let (mut ll, mut posts) = step(&mean, &sigma, 0)?;
    let mut trace = vec![ll];
    let mut ridged_any = false;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < ctrl.max_iter {
        iterations += 1;
        let mut means = Vec::with_capacity(n * p);
        let mut within = vec![0.0; p * p];
        for q in &posts {
            means.extend_from_slice(&q.mean);
            for (w, c) in within.iter_mut().zip(&q.cov) {
                *w += c;
            }
        }
        let update = finish_m_step(&means, &within, n, p);
        ridged_any |= update.ridged;
        let (new_ll, new_posts) = step(&update.mean, &update.sigma, iterations)?;
        let param_change = update
            .mean
            .iter()
            .zip(&mean)
            .map(|(a, b)| (a - b).abs())
            .chain(update.sigma.iter().zip(sigma.iter()).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let ll_change = (new_ll - ll).abs();
        mean = update.mean;
        sigma = update.sigma;
        ll = new_ll;
        posts = new_posts;
        trace.push(ll);
        let done = match ctrl.criterion {
            Convergence::LogLikelihood => ll_change < ctrl.tol,
            Convergence::Parameters => param_change < ctrl.tol,
        };
        if done {
            converged = true;
            break;
        }
    }
    let reason = if ridged_any {
        StopReason::Degenerate
    } else if converged {
        StopReason::TolReached
    } else {
        StopReason::MaxIter
    };
    Ok(FitResult {
        params: WnParams::new(&mean, sigma)?,
        loglik_trace: trace,
        iterations,
        evaluations: iterations + 1,
        converged,
        reason,
    })
}

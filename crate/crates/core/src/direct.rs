//! Direct maximization of the wrapped normal log-likelihood.
//!
//! The search runs over Log-Cholesky coordinates, so every point visited maps
//! to a positive definite covariance and the problem is unconstrained. The
//! default optimizer is a Nelder–Mead simplex; a BFGS variant with central
//! finite-difference gradients is available for small dispersions where the
//! surface is smooth and well scaled.
//!
//! The cost of one objective evaluation grows like `n (2J+1)^p`, and the
//! number of evaluations with the dimension `p + p(p+1)/2` of the search
//! space, so the routine refuses `p` above [`OptimizerControl::max_dim`]
//! unless the caller raises it.

use nalgebra::{DMatrix, DVector};

use crate::circular::TorusSample;
use crate::em::{FitResult, StopReason};
use crate::error::{Result, WnError};
use crate::model::{
    from_log_cholesky, kernel_log_likelihood, to_log_cholesky, Lattice, LatticeConfig, LogCholeskyParams,
    WnParams, WrappedKernel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerMethod {
    Simplex,
    QuasiNewton,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerControl {
    pub method: OptimizerMethod,
    pub max_evals: usize,
    /// Stop once the simplex (or the BFGS step) is smaller than this in every coordinate.
    pub x_tol: f64,
    /// Relative objective tolerance.
    pub f_tol: f64,
    /// Largest torus dimension accepted.
    pub max_dim: usize,
    /// Edge length of the initial simplex.
    pub simplex_scale: f64,
}

impl OptimizerControl {
    pub const DEFAULT_MAX_DIM: usize = 6;

    fn validate(&self) -> Result<()> {
        if self.max_evals == 0 || !(self.x_tol > 0.0) || !(self.f_tol > 0.0) || !(self.simplex_scale > 0.0) {
            return Err(WnError::InvalidArgument(
                "optimizer needs max_evals >= 1 and positive tolerances".into(),
            ));
        }
        Ok(())
    }
}

impl Default for OptimizerControl {
    fn default() -> Self {
        OptimizerControl {
            method: OptimizerMethod::Simplex,
            max_evals: 20_000,
            x_tol: 1e-10,
            f_tol: 1e-10,
            max_dim: Self::DEFAULT_MAX_DIM,
            simplex_scale: 0.1,
        }
    }
}

/// Negative log-likelihood at the parameters encoded by `theta`.
pub fn objective(theta: &LogCholeskyParams, sample: &TorusSample, config: LatticeConfig) -> Result<f64> {
    let lattice = config.lattice(sample.p())?;
    neg_loglik(theta, sample, &lattice)
}

fn neg_loglik(theta: &LogCholeskyParams, sample: &TorusSample, lattice: &Lattice) -> Result<f64> {
    let kernel = WrappedKernel::new(theta.normal_kernel(sample.p())?, lattice);
    Ok(-kernel_log_likelihood(&kernel, sample))
}

struct Counted<'a> {
    sample: &'a TorusSample,
    lattice: &'a Lattice,
    evals: usize,
}

impl Counted<'_> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let theta = LogCholeskyParams { theta: x.to_vec() };
        match neg_loglik(&theta, self.sample, self.lattice) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    }
}

struct Outcome {
    x: Vec<f64>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Maximizes the log-likelihood starting from `init`.
pub fn fit_direct(
    sample: &TorusSample,
    init: &WnParams,
    config: LatticeConfig,
    ctrl: OptimizerControl,
) -> Result<FitResult> {
    let p = sample.p();
    if p > ctrl.max_dim {
        return Err(WnError::DimensionGuard { p, limit: ctrl.max_dim });
    }
    if init.p() != p {
        return Err(WnError::DimensionMismatch { expected: p, found: init.p() });
    }
    ctrl.validate()?;
    let lattice = config.lattice(p)?;
    let x0 = to_log_cholesky(init)?.theta;
    let mut f = Counted { sample, lattice: &lattice, evals: 0 };
    let out = match ctrl.method {
        OptimizerMethod::Simplex => nelder_mead(&mut f, &x0, &ctrl),
        OptimizerMethod::QuasiNewton => bfgs(&mut f, &x0, &ctrl),
    };
    let params = from_log_cholesky(&LogCholeskyParams { theta: out.x }, p)?;
    Ok(FitResult {
        params,
        loglik_trace: out.trace.iter().map(|v| -v).collect(),
        iterations: out.iterations,
        evaluations: f.evals,
        converged: out.converged,
        reason: if out.converged { StopReason::TolReached } else { StopReason::MaxIter },
    })
}

fn nelder_mead(f: &mut Counted<'_>, x0: &[f64], ctrl: &OptimizerControl) -> Outcome {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let dim = x0.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    pts.push(x0.to_vec());
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] += ctrl.simplex_scale;
        pts.push(x);
    }
    let mut vals: Vec<f64> = pts.iter().map(|x| f.eval(x)).collect();
    let mut trace = vec![vals[0]];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let best = vals[0];
        if best < *trace.last().unwrap() {
            trace.push(best);
        }

        let f_spread = vals[dim] - best;
        let x_spread = pts[1..]
            .iter()
            .flat_map(|x| x.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread <= ctrl.f_tol * (best.abs() + ctrl.f_tol) || x_spread <= ctrl.x_tol {
            converged = best.is_finite();
            break;
        }
        if f.evals >= ctrl.max_evals {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; dim];
        for x in &pts[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&pts[dim]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(REFLECT);
        let fr = f.eval(&xr);
        if fr < vals[0] {
            let xe = along(EXPAND);
            let fe = f.eval(&xe);
            if fe < fr {
                pts[dim] = xe;
                vals[dim] = fe;
            } else {
                pts[dim] = xr;
                vals[dim] = fr;
            }
            continue;
        }
        if fr < vals[dim - 1] {
            pts[dim] = xr;
            vals[dim] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[dim] {
            let xc = along(CONTRACT * REFLECT);
            let fc = f.eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = f.eval(&xc);
            (xc, fc)
        };
        if fc < vals[dim].min(fr) {
            pts[dim] = xc;
            vals[dim] = fc;
            continue;
        }
        for i in 1..=dim {
            let x: Vec<f64> = pts[0].iter().zip(&pts[i]).map(|(b, v)| b + SHRINK * (v - b)).collect();
            vals[i] = f.eval(&x);
            pts[i] = x;
        }
    }
    let best = (0..=dim).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    if vals[best] < *trace.last().unwrap() {
        trace.push(vals[best]);
    }
    // the returned point never scores worse than the start
    let x = if vals[best] <= trace[0] { pts[best].clone() } else { x0.to_vec() };
    Outcome { x, trace, iterations, converged }
}

fn gradient(f: &mut Counted<'_>, x: &[f64]) -> DVector<f64> {
    let h0 = f64::EPSILON.cbrt();
    let mut g = DVector::zeros(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = h0 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let up = f.eval(&xp);
        xp[i] = x[i] - h;
        let down = f.eval(&xp);
        xp[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

fn bfgs(f: &mut Counted<'_>, x0: &[f64], ctrl: &OptimizerControl) -> Outcome {
    let dim = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f.eval(x.as_slice());
    let mut trace = vec![fx];
    let mut g = gradient(f, x.as_slice());
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut iterations = 0;
    let mut converged = false;

    while f.evals < ctrl.max_evals {
        iterations += 1;
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(dim, dim);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut t = 1.0;
        let mut accepted = None;
        while f.evals < ctrl.max_evals {
            let xn = &x + &dir * t;
            let fn_ = f.eval(xn.as_slice());
            if fn_ <= fx + 1e-4 * t * slope {
                accepted = Some((xn, fn_));
                break;
            }
            t *= 0.5;
            if t * dir.amax() < ctrl.x_tol {
                break;
            }
        }
        let Some((xn, fn_)) = accepted else {
            // no descent along the search direction at the step floor
            converged = f.evals < ctrl.max_evals;
            break;
        };
        let step = &xn - &x;
        let f_change = fx - fn_;
        x = xn;
        fx = fn_;
        trace.push(fx);
        if f_change <= ctrl.f_tol * (fx.abs() + ctrl.f_tol) || step.amax() <= ctrl.x_tol {
            converged = true;
            break;
        }
        let gn = gradient(f, x.as_slice());
        let yv = &gn - &g;
        let sy = step.dot(&yv);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(dim, dim);
            let a = &eye - &step * yv.transpose() * rho;
            let b = &eye - &yv * step.transpose() * rho;
            h_inv = &a * &h_inv * &b + &step * step.transpose() * rho;
        }
        g = gn;
    }
    Outcome { x: x.iter().copied().collect(), trace, iterations, converged }
}

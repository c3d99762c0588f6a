//! Classification EM.
//!
//! After the E-step every observation is assigned the single most probable
//! lattice shift (C-step). Given those assignments the classification
//! log-likelihood `Σ log φ(y_i + 2πĵ_i; μ, Σ)` is an ordinary normal
//! likelihood with known offsets, so the M-step is the sample mean and the
//! covariance (divisor n) of the reconstructed points `x̂_i = y_i + 2πĵ_i`.
//!
//! There are finitely many classifications, so the iteration stops at a fixed
//! point where the assignments no longer change.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::circular::TorusSample;
use crate::em::{EStepWeights, EmControl, FitResult, StopReason};
use crate::error::{Result, WnError};
use crate::linalg;
use crate::model::{LatticeConfig, LatticeRow, NormalKernel, WnParams, WrappedKernel};

/// Wrapping coefficients `ĵ_i` of every observation.
///
/// Coefficients are absolute: `x̂_i = y_i + 2πĵ_i` with `y_i` the canonical
/// observation in `[0, 2π)^p`. They can exceed the lattice range by one,
/// since the lattice is laid around the recentered representative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappingCoefficients {
    pub j_hat: Vec<Vec<i64>>,
}

impl WrappingCoefficients {
    pub fn zeros(n: usize, p: usize) -> Self {
        WrappingCoefficients { j_hat: vec![vec![0; p]; n] }
    }

    /// Reconstructed unwrapped sample, `n x p`.
    pub fn unwrap_sample(&self, sample: &TorusSample) -> Result<DMatrix<f64>> {
        if self.j_hat.len() != sample.n() {
            return Err(WnError::DimensionMismatch { expected: sample.n(), found: self.j_hat.len() });
        }
        let p = sample.p();
        let mut out = DMatrix::zeros(sample.n(), p);
        for (i, (y, j)) in sample.rows().zip(&self.j_hat).enumerate() {
            if j.len() != p {
                return Err(WnError::DimensionMismatch { expected: p, found: j.len() });
            }
            for k in 0..p {
                out[(i, k)] = y[k] + TAU * j[k] as f64;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct CemFitResult {
    /// Estimates and the classification log-likelihood trace.
    pub fit: FitResult,
    pub coefficients: WrappingCoefficients,
    /// `x̂_i = y_i + 2πĵ_i`, one row per observation.
    pub unwrapped: DMatrix<f64>,
    /// Parameters under which `coefficients` were chosen; equal to
    /// `fit.params` when the run stopped at a fixed point.
    pub classification_params: WnParams,
}

/// Lattice row of largest weight; ties go to the first row in lattice order.
pub fn classify(weights: &EStepWeights, config: LatticeConfig) -> Result<LatticeRow> {
    let p = weights.centered.len();
    let lattice = config.lattice(p)?;
    if weights.weights.len() != lattice.len() {
        return Err(WnError::DimensionMismatch { expected: lattice.len(), found: weights.weights.len() });
    }
    Ok(LatticeRow(lattice.row(argmax_first(&weights.weights)).to_vec()))
}

fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (r, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = r;
        }
    }
    best
}

/// Unwrapped mean and population covariance of `y_i + 2πĵ_i`.
fn offset_moments(sample: &TorusSample, coeffs: &WrappingCoefficients) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (n, p) = (sample.n(), sample.p());
    if n < 2 {
        return Err(WnError::Degenerate("classification M-step needs at least two observations".into()));
    }
    let x = coeffs.unwrap_sample(sample)?;
    let mut rows = Vec::with_capacity(n * p);
    for i in 0..n {
        rows.extend(x.row(i).iter());
    }
    let (mean, cov) = linalg::mean_and_population_cov(&rows, n, p);
    for k in 0..p {
        if !(cov[(k, k)] > 0.0) {
            return Err(WnError::Degenerate(format!("column {k} has zero variance after unwrapping")));
        }
    }
    Ok((mean.iter().copied().collect(), cov))
}

/// Normal MLE of the reconstructed points; the exact maximizer of the
/// classification log-likelihood for fixed coefficients.
pub fn cem_m_step(sample: &TorusSample, coeffs: &WrappingCoefficients) -> Result<WnParams> {
    let (mean, cov) = offset_moments(sample, coeffs)?;
    WnParams::new(&mean, cov)
}

/// Classification log-likelihood `Σ log φ(y_i + 2πĵ_i; μ, Σ)`.
pub fn classification_log_likelihood(
    sample: &TorusSample,
    coeffs: &WrappingCoefficients,
    params: &WnParams,
) -> Result<f64> {
    let x = coeffs.unwrap_sample(sample)?;
    let n = x.nrows() as f64;
    // μ is only known modulo 2π; evaluate on the branch nearest the reconstructed points
    let mean: Vec<f64> = params
        .mu()
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let centroid = x.column(k).sum() / n;
            m + TAU * ((centroid - m) / TAU).round()
        })
        .collect();
    Ok(offset_log_likelihood(&x, &NormalKernel::new(&mean, params.sigma())?))
}

fn offset_log_likelihood(x: &DMatrix<f64>, kernel: &NormalKernel) -> f64 {
    (0..x.nrows())
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            kernel.log_pdf(&row)
        })
        .sum()
}

/// C-step for every observation: absolute coefficients of the most probable shift.
fn c_step(kernel: &WrappedKernel<'_>, sample: &TorusSample) -> WrappingCoefficients {
    let p = sample.p();
    let j_hat = (0..sample.n())
        .into_par_iter()
        .map_init(
            || kernel.scratch(),
            |s, i| {
                let y = sample.row(i);
                kernel.log_terms(y, s);
                let row = kernel.lattice().row(argmax_first(&s.terms));
                (0..p)
                    .map(|k| {
                        let centering = ((s.centered[k] - y[k]) / TAU).round() as i64;
                        centering + row[k] as i64
                    })
                    .collect()
            },
        )
        .collect();
    WrappingCoefficients { j_hat }
}

/// Runs classification EM from `init`.
///
/// Stops at a classification fixed point, when the classification
/// log-likelihood changes by less than `ctrl.tol`, or after `ctrl.max_iter`
/// M-steps.
pub fn fit_cem(sample: &TorusSample, init: &WnParams, config: LatticeConfig, ctrl: EmControl) -> Result<CemFitResult> {
    let p = sample.p();
    if init.p() != p {
        return Err(WnError::DimensionMismatch { expected: p, found: init.p() });
    }
    if ctrl.max_iter == 0 || !(ctrl.tol > 0.0) {
        return Err(WnError::InvalidArgument("max_iter must be >= 1 and tol > 0".into()));
    }
    let lattice = config.lattice(p)?;

    let mut classified_under = init.clone();
    let kernel = WrappedKernel::new(init.normal_kernel()?, &lattice);
    let mut coeffs = c_step(&kernel, sample);
    let mut trace = vec![offset_log_likelihood(&coeffs.unwrap_sample(sample)?, kernel.normal())];

    let mut iterations = 0;
    loop {
        iterations += 1;
        let (mean, cov) = offset_moments(sample, &coeffs)?;
        let normal = NormalKernel::new(&mean, &cov)?;
        let x = coeffs.unwrap_sample(sample)?;
        let lc = offset_log_likelihood(&x, &normal);
        if !lc.is_finite() {
            return Err(WnError::NumericalFailure { iteration: iterations });
        }
        let change = (lc - trace[trace.len() - 1]).abs();
        trace.push(lc);
        let params = WnParams::new(&mean, cov)?;

        let kernel = WrappedKernel::new(normal, &lattice);
        let next = c_step(&kernel, sample);
        let stop = if next == coeffs {
            classified_under = params.clone();
            Some((true, StopReason::FixedPoint))
        } else if change < ctrl.tol {
            Some((true, StopReason::TolReached))
        } else if iterations >= ctrl.max_iter {
            Some((false, StopReason::MaxIter))
        } else {
            None
        };
        if let Some((converged, reason)) = stop {
            return Ok(CemFitResult {
                fit: FitResult {
                    params,
                    loglik_trace: trace,
                    iterations,
                    evaluations: iterations + 1,
                    converged,
                    reason,
                },
                coefficients: coeffs,
                unwrapped: x,
                classification_params: classified_under,
            });
        }
        classified_under = params;
        coeffs = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circular::{initial_params, wrap_unchecked, AngleVector};
    use crate::em::e_step;
    use crate::simulate::sample_wn;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn w(weights: Vec<f64>, p: usize) -> EStepWeights {
        EStepWeights { centered: vec![0.0; p], weights, log_density: 0.0 }
    }

    #[test]
    fn classify_examples() {
        let cfg = LatticeConfig::new(1);
        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        assert_eq!(classify(&w(v, 2), cfg).unwrap(), LatticeRow(vec![0, 0]));
        assert_eq!(classify(&w(vec![0.5, 0.0, 0.5], 1), cfg).unwrap(), LatticeRow(vec![-1]));
        let params = WnParams::isotropic(&[2.0, 4.0], 0.1).unwrap();
        let e = e_step(params.mu(), &params, LatticeConfig::default()).unwrap();
        assert_eq!(classify(&e, LatticeConfig::default()).unwrap(), LatticeRow(vec![0, 0]));
        assert!(classify(&w(vec![1.0; 4], 1), cfg).is_err());
    }

    #[test]
    fn m_step_offset_free_and_translation() {
        let s = TorusSample::from_rows(&[[0.1, 0.2], [0.4, 0.1], [0.3, 0.5], [0.2, 0.3]]).unwrap();
        let zero = WrappingCoefficients::zeros(4, 2);
        let a = cem_m_step(&s, &zero).unwrap();
        let (mean, cov) = linalg::mean_and_population_cov(s.as_row_major(), 4, 2);
        assert_abs_diff_eq!(a.mu().as_slice()[0], mean[0], epsilon = 1e-15);
        assert_abs_diff_eq!((a.sigma() - &cov).amax(), 0.0, epsilon = 1e-15);

        let shifted = WrappingCoefficients { j_hat: vec![vec![1, -2]; 4] };
        let (m2, c2) = offset_moments(&s, &shifted).unwrap();
        assert_abs_diff_eq!(m2[0], mean[0] + TAU, epsilon = 1e-12);
        assert_abs_diff_eq!(m2[1], mean[1] - 2.0 * TAU, epsilon = 1e-12);
        assert_abs_diff_eq!((c2 - cov).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn m_step_degenerate_inputs() {
        let s = TorusSample::from_rows(&[[0.1, 0.2]]).unwrap();
        assert!(matches!(cem_m_step(&s, &WrappingCoefficients::zeros(1, 2)), Err(WnError::Degenerate(_))));
        let s = TorusSample::from_rows(&[[0.1, 0.2], [0.1, 0.3]]).unwrap();
        assert!(matches!(cem_m_step(&s, &WrappingCoefficients::zeros(2, 2)), Err(WnError::Degenerate(_))));
    }

    #[test]
    fn m_step_maximizes_classification_likelihood_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<[f64; 2]> = (0..5).map(|_| [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)]).collect();
        let s = TorusSample::from_rows(&rows).unwrap();
        let coeffs = WrappingCoefficients {
            j_hat: (0..5).map(|_| vec![rng.random_range(-1..=1), rng.random_range(-1..=1)]).collect(),
        };
        let best = cem_m_step(&s, &coeffs).unwrap();
        let (mean, _) = offset_moments(&s, &coeffs).unwrap();
        let at_best = classification_log_likelihood(&s, &coeffs, &best).unwrap();
        let x = coeffs.unwrap_sample(&s).unwrap();
        // coarse grid over (μ1, μ2, log sd1, log sd2, correlation) around the estimate
        let sd = [best.sigma()[(0, 0)].sqrt(), best.sigma()[(1, 1)].sqrt()];
        let steps: [f64; 5] = [-0.3, -0.1, 0.0, 0.1, 0.3];
        for d1 in steps {
            for d2 in steps {
                for l1 in steps {
                    for l2 in steps {
                        for rho in [-0.6, -0.2, 0.0, 0.2, 0.6] {
                            let s1 = sd[0] * l1.exp();
                            let s2 = sd[1] * l2.exp();
                            let cov = DMatrix::from_row_slice(2, 2, &[s1 * s1, rho * s1 * s2, rho * s1 * s2, s2 * s2]);
                            let k = NormalKernel::new(&[mean[0] + d1, mean[1] + d2], &cov).unwrap();
                            assert!(offset_log_likelihood(&x, &k) <= at_best + 1e-9);
                        }
                    }
                }
            }
        }
    }

    fn check_fit_invariants(s: &TorusSample, fit: &CemFitResult, cfg: LatticeConfig) {
        for (i, y) in s.rows().enumerate() {
            for k in 0..s.p() {
                let back = wrap_unchecked(fit.unwrapped[(i, k)]);
                let d = (back - y[k]).abs();
                assert!(d.min(TAU - d) <= 4.0 * f64::EPSILON * fit.unwrapped[(i, k)].abs().max(1.0));
                assert_eq!(((fit.unwrapped[(i, k)] - y[k]) / TAU).round() as i64, fit.coefficients.j_hat[i][k]);
            }
        }
        // no lattice row beats the chosen one under the classifying parameters
        let theta = &fit.classification_params;
        let n = s.n() as f64;
        // the reconstruction may sit on a different 2π branch than the canonical mean
        let branch: Vec<f64> = (0..s.p())
            .map(|k| {
                let m = theta.mu().as_slice()[k];
                TAU * ((fit.unwrapped.column(k).sum() / n - m) / TAU).round()
            })
            .collect();
        for (i, y) in s.rows().enumerate() {
            let e = e_step(&AngleVector::new(y).unwrap(), theta, cfg).unwrap();
            let lattice = cfg.lattice(s.p()).unwrap();
            let chosen: Vec<f64> = (0..s.p()).map(|k| fit.unwrapped[(i, k)] - branch[k]).collect();
            let r = lattice
                .iter()
                .position(|row| {
                    (0..s.p()).all(|k| ((e.centered[k] + TAU * row[k] as f64) - chosen[k]).abs() < 1e-9)
                })
                .expect("chosen point lies on the lattice");
            let best = e.weights.iter().copied().fold(0.0, f64::max);
            assert!(e.weights[r] >= best);
        }
        for wdw in fit.fit.loglik_trace.windows(2) {
            assert!(wdw[1] >= wdw[0] - 1e-8, "{:?}", fit.fit.loglik_trace);
        }
    }

    #[test]
    fn small_sigma_matches_normal_mle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let truth = WnParams::isotropic(&[0.0, 0.0], PI / 8.0).unwrap();
        let s = sample_wn(&truth, 200, &mut rng).unwrap();
        let init = initial_params(&s).unwrap();
        let cfg = LatticeConfig::default();
        let fit = fit_cem(&s, &init, cfg, EmControl::default()).unwrap();
        assert!(fit.fit.converged);
        check_fit_invariants(&s, &fit, cfg);
        // recentered data about the circular mean, then ordinary normal MLE
        let mu0 = init.mu().as_slice();
        let mut centered = Vec::new();
        for y in s.rows() {
            for k in 0..2 {
                centered.push(mu0[k] + crate::circular::principal_difference(y[k] - mu0[k]));
            }
        }
        let (mean, cov) = linalg::mean_and_population_cov(&centered, 200, 2);
        for k in 0..2 {
            let d = crate::circular::principal_difference(fit.fit.params.mu().as_slice()[k] - mean[k]);
            assert!(d.abs() < 1e-6);
        }
        assert!((fit.fit.params.sigma() - cov).amax() < 1e-6);
    }

    #[test]
    fn large_sigma_ascends_and_terminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let truth = WnParams::isotropic(&[1.0], 1.5 * PI).unwrap();
        let s = sample_wn(&truth, 500, &mut rng).unwrap();
        let init = initial_params(&s).unwrap();
        let cfg = LatticeConfig::default();
        let fit = fit_cem(&s, &init, cfg, EmControl::default()).unwrap();
        assert!(fit.fit.converged);
        check_fit_invariants(&s, &fit, cfg);
        assert!(fit.fit.loglik() >= fit.fit.loglik_trace[0]);
    }

    #[test]
    fn random_instances_terminate_with_valid_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for k in 0..9 {
            let p = 1 + k % 3;
            let sd = [PI / 8.0, PI / 2.0, 1.5 * PI][k / 3];
            let truth = WnParams::isotropic(&vec![3.0; p], sd).unwrap();
            let s = sample_wn(&truth, 50, &mut rng).unwrap();
            let init = initial_params(&s).unwrap();
            let cfg = LatticeConfig::new(2);
            let fit = fit_cem(&s, &init, cfg, EmControl { max_iter: 1000, tol: 1e-14, ..Default::default() })
                .unwrap();
            assert_eq!(fit.fit.reason, StopReason::FixedPoint);
            check_fit_invariants(&s, &fit, cfg);
            let again = fit_cem(&s, &init, cfg, EmControl { max_iter: 1000, tol: 1e-14, ..Default::default() })
                .unwrap();
            assert_eq!(again.coefficients, fit.coefficients);
        }
    }
}

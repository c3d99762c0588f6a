//! Sampling, random correlation matrices, estimator metrics and the Monte
//! Carlo driver.

mod correlation;
mod experiment;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::circular::{wrap_unchecked, TorusSample};
use crate::error::{Result, WnError};
use crate::linalg;
use crate::model::{log_likelihood, LatticeConfig, WnParams};

pub use correlation::{random_correlation, scale_to_covariance, CorrelationSpec};
pub use experiment::{
    fit_with, run_experiment, summarize, CellSummary, ExperimentConfig, ExperimentReport, Method, ResultRow,
    SigmaLevel,
};

/// Draws `n` points from `N_p(μ, Σ)` and wraps them onto the torus.
///
/// ```
/// use rand::SeedableRng;
/// use wntorus::{sample_wn, WnParams};
/// let params = WnParams::isotropic(&[0.0, 3.0], 0.5).unwrap();
/// let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
/// let sample = sample_wn(&params, 10, &mut rng).unwrap();
/// assert_eq!((sample.n(), sample.p()), (10, 2));
/// ```
pub fn sample_wn<R: Rng + ?Sized>(params: &WnParams, n: usize, rng: &mut R) -> Result<TorusSample> {
    if n == 0 {
        return Err(WnError::Empty("sample size"));
    }
    let p = params.p();
    let l = linalg::cholesky(params.sigma())?.unpack();
    let mu = params.mu().as_slice();
    let mut data = Vec::with_capacity(n * p);
    let mut z = vec![0.0; p];
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for a in 0..p {
            let x = mu[a] + (0..=a).map(|b| l[(a, b)] * z[b]).sum::<f64>();
            data.push(wrap_unchecked(x));
        }
    }
    TorusSample::from_row_major(&data, p)
}

/// Estimator quality on one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub wilks: f64,
    pub angle_sep: f64,
    pub scatter_div: f64,
    pub runtime_seconds: Option<f64>,
}

/// `-2 (ℓ(truth) - ℓ(estimate))`.
pub fn wilks_lambda(
    sample: &TorusSample,
    params_hat: &WnParams,
    params_true: &WnParams,
    config: LatticeConfig,
) -> Result<f64> {
    let at_truth = log_likelihood(sample, params_true, config)?;
    let at_hat = log_likelihood(sample, params_hat, config)?;
    Ok(-2.0 * (at_truth - at_hat))
}

/// `tr(Σ̂ Σ0⁻¹) - log|Σ̂ Σ0⁻¹| - p`.
pub fn scatter_divergence(sigma_hat: &DMatrix<f64>, sigma_true: &DMatrix<f64>) -> Result<f64> {
    let p = sigma_true.nrows();
    if sigma_hat.nrows() != p || sigma_hat.ncols() != p || sigma_true.ncols() != p {
        return Err(WnError::DimensionMismatch { expected: p, found: sigma_hat.nrows() });
    }
    let c_hat = linalg::cholesky(sigma_hat)?;
    let c_true = linalg::cholesky(sigma_true)?;
    // tr(Σ̂ Σ0⁻¹) = ‖L0⁻¹ L̂‖_F²
    let mut m = c_hat.l();
    c_true.l_dirty().solve_lower_triangular_mut(&mut m);
    let trace = m.norm_squared();
    let log_det = 2.0 * (linalg::half_log_det(&c_hat) - linalg::half_log_det(&c_true));
    Ok(trace - log_det - p as f64)
}

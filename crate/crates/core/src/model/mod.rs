//! Wrapped normal parameters, densities and the log-likelihood.
//!
//! The wrapped density of `y` on the p-torus is the lattice sum
//! `Σ_j φ(y + 2πj; μ, Σ)`. It is evaluated after recentering `y` about `μ`
//! (every component of `y - μ` in `(-π, π]`), which lets a small truncation
//! level `J` reach double precision for moderate `Σ`.

mod kernel;
mod lattice;
mod log_cholesky;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::circular::{AngleVector, TorusSample};
use crate::error::{Result, WnError};
use crate::linalg;

pub(crate) use kernel::{NormalKernel, WrappedKernel};
pub use lattice::{lattice_rows, Lattice, LatticeConfig, LatticeRow, MAX_LATTICE_ROWS};
pub use log_cholesky::{from_log_cholesky, to_log_cholesky, LogCholeskyParams};

/// Relative asymmetry tolerated when validating a covariance matrix.
const SYMMETRY_TOL: f64 = 1e-10;

/// Mean direction and covariance of the underlying normal.
#[derive(Debug, Clone, PartialEq)]
pub struct WnParams {
    mu: AngleVector,
    sigma: DMatrix<f64>,
}

impl WnParams {
    /// Validates `sigma` (square, symmetric, positive definite) and wraps `mu`.
    pub fn new(mu: &[f64], mut sigma: DMatrix<f64>) -> Result<Self> {
        let p = mu.len();
        if !sigma.is_square() || sigma.nrows() != p {
            return Err(WnError::DimensionMismatch { expected: p, found: sigma.nrows() });
        }
        let scale = sigma.amax();
        for i in 0..p {
            for j in (i + 1)..p {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(WnError::Asymmetric);
                }
            }
        }
        linalg::symmetrize(&mut sigma);
        linalg::cholesky(&sigma)?;
        Ok(WnParams { mu: AngleVector::new(mu)?, sigma })
    }

    /// `WN(mu, sd^2 I)`.
    pub fn isotropic(mu: &[f64], sd: f64) -> Result<Self> {
        let p = mu.len();
        Self::new(mu, DMatrix::identity(p, p) * (sd * sd))
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &AngleVector {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub(crate) fn normal_kernel(&self) -> Result<NormalKernel> {
        NormalKernel::new(self.mu.as_slice(), &self.sigma)
    }
}

/// Log-density of `N_p(mu, Sigma)` at `x`.
pub fn mvn_logpdf(x: &[f64], params: &WnParams) -> Result<f64> {
    if x.len() != params.p() {
        return Err(WnError::DimensionMismatch { expected: params.p(), found: x.len() });
    }
    Ok(params.normal_kernel()?.log_pdf(x))
}

/// Log of the truncated lattice sum at a single point of the torus.
pub fn wrapped_log_density(y: &AngleVector, params: &WnParams, config: LatticeConfig) -> Result<f64> {
    if y.len() != params.p() {
        return Err(WnError::DimensionMismatch { expected: params.p(), found: y.len() });
    }
    let lattice = config.lattice(params.p())?;
    let kernel = WrappedKernel::new(params.normal_kernel()?, &lattice);
    let mut scratch = kernel.scratch();
    Ok(kernel.log_terms(y.as_slice(), &mut scratch))
}

/// Sum of wrapped log-densities over the sample.
///
/// ```
/// use wntorus::{log_likelihood, LatticeConfig, TorusSample, WnParams};
/// let sample = TorusSample::from_rows(&[[0.1, 6.2], [0.3, 0.2]]).unwrap();
/// let params = WnParams::isotropic(&[0.0, 0.0], 0.5).unwrap();
/// let ll = log_likelihood(&sample, &params, LatticeConfig::default()).unwrap();
/// assert!(ll.is_finite());
/// ```
pub fn log_likelihood(sample: &TorusSample, params: &WnParams, config: LatticeConfig) -> Result<f64> {
    if sample.p() != params.p() {
        return Err(WnError::DimensionMismatch { expected: params.p(), found: sample.p() });
    }
    let lattice = config.lattice(params.p())?;
    let kernel = WrappedKernel::new(params.normal_kernel()?, &lattice);
    Ok(kernel_log_likelihood(&kernel, sample))
}

pub(crate) fn kernel_log_likelihood(kernel: &WrappedKernel<'_>, sample: &TorusSample) -> f64 {
    let terms: Vec<f64> = (0..sample.n())
        .into_par_iter()
        .map_init(|| kernel.scratch(), |s, i| kernel.log_terms(sample.row(i), s))
        .collect();
    terms.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, TAU};

    fn random_spd(p: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        a.transpose() * &a + DMatrix::identity(p, p)
    }

    /// Explicit determinant and inverse, no Cholesky.
    fn dense_logpdf(x: &[f64], mu: &[f64], sigma: &DMatrix<f64>) -> f64 {
        let p = x.len();
        let d = nalgebra::DVector::from_iterator(p, x.iter().zip(mu).map(|(a, b)| a - b));
        let inv = sigma.clone().try_inverse().unwrap();
        let q = (d.transpose() * inv * &d)[(0, 0)];
        -0.5 * (p as f64) * TAU.ln() - 0.5 * sigma.determinant().ln() - 0.5 * q
    }

    #[test]
    fn mvn_peak_and_unit_distance() {
        let params = WnParams::isotropic(&[0.0, 0.0], 1.0).unwrap();
        assert_abs_diff_eq!(mvn_logpdf(&[0.0, 0.0], &params).unwrap(), -TAU.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(mvn_logpdf(&[1.0, 0.0], &params).unwrap(), -TAU.ln() - 0.5, epsilon = 1e-15);
        assert!(mvn_logpdf(&[1.0], &params).is_err());
    }

    #[test]
    fn mvn_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let sigma = random_spd(3, &mut rng);
            let mu: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..TAU)).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..10.0)).collect();
            let params = WnParams::new(&mu, sigma.clone()).unwrap();
            let got = mvn_logpdf(&x, &params).unwrap();
            let want = dense_logpdf(&x, params.mu().as_slice(), &sigma);
            assert_abs_diff_eq!(got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn params_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert_eq!(WnParams::new(&[0.0, 0.0], asym), Err(WnError::Asymmetric));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(WnParams::new(&[0.0, 0.0], indefinite), Err(WnError::SingularCovariance));
        assert!(WnParams::new(&[0.0], DMatrix::identity(2, 2)).is_err());
        let p = WnParams::isotropic(&[-0.5], 1.0).unwrap();
        assert_abs_diff_eq!(p.mu().as_slice()[0], TAU - 0.5, epsilon = 1e-15);
    }

    fn scalar_wrapped_logpdf(y: f64, mu: f64, sd: f64, jmax: i32) -> f64 {
        let s: f64 = (-jmax..=jmax)
            .map(|j| {
                let x = y + TAU * j as f64 - mu;
                (-(x * x) / (2.0 * sd * sd)).exp() / (sd * TAU.sqrt())
            })
            .sum();
        s.ln()
    }

    #[test]
    fn near_uniform_limit() {
        let params = WnParams::isotropic(&[1.0], 10.0).unwrap();
        let cfg = LatticeConfig::new(6);
        for y in [0.0, 1.0, 3.0, 5.5] {
            let v = wrapped_log_density(&AngleVector::new(&[y]).unwrap(), &params, cfg).unwrap();
            assert_abs_diff_eq!(v, -TAU.ln(), epsilon = 1e-3);
            let reference = scalar_wrapped_logpdf(y, 1.0, 10.0, 200);
            assert_abs_diff_eq!(v, reference, epsilon = 1e-3);
        }
    }

    #[test]
    fn single_term_sum_is_normal_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = WnParams::new(&[1.0, 2.0], random_spd(2, &mut rng)).unwrap();
        let y = params.mu().clone();
        let v = wrapped_log_density(&y, &params, LatticeConfig::new(0)).unwrap();
        assert_eq!(v, mvn_logpdf(y.as_slice(), &params).unwrap());
    }

    #[test]
    fn matches_wide_truncation_oracle() {
        let params = WnParams::isotropic(&[0.0], PI / 4.0).unwrap();
        let v = wrapped_log_density(&AngleVector::new(&[1.0]).unwrap(), &params, LatticeConfig::default())
            .unwrap();
        assert_abs_diff_eq!(v, scalar_wrapped_logpdf(1.0, 0.0, PI / 4.0, 50), epsilon = 1e-12);
    }

    #[test]
    fn univariate_density_integrates_to_one() {
        let nodes = 10_000;
        let h = TAU / nodes as f64;
        for sd in [PI / 8.0, PI / 4.0, PI, TAU] {
            let params = WnParams::isotropic(&[0.7], sd).unwrap();
            let total: f64 = (0..nodes)
                .map(|k| {
                    let y = AngleVector::new(&[k as f64 * h]).unwrap();
                    wrapped_log_density(&y, &params, LatticeConfig::new(6)).unwrap().exp()
                })
                .sum::<f64>()
                * h;
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
        }
    }

    fn sample_from(rows: &[[f64; 2]]) -> TorusSample {
        TorusSample::from_rows(rows).unwrap()
    }

    #[test]
    fn likelihood_additivity_and_wrap_invariance() {
        let rows = [[0.1, 6.0], [3.0, 2.5], [5.0, 0.4]];
        let s = sample_from(&rows);
        let params = WnParams::new(&[0.2, 0.1], DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.3, 0.5])).unwrap();
        let cfg = LatticeConfig::default();
        let base = log_likelihood(&s, &params, cfg).unwrap();

        let one = sample_from(&rows[..1]);
        let y0 = AngleVector::new(&rows[0]).unwrap();
        assert_eq!(log_likelihood(&one, &params, cfg).unwrap(), wrapped_log_density(&y0, &params, cfg).unwrap());

        let doubled: Vec<[f64; 2]> = rows.iter().flat_map(|r| [*r, *r]).collect();
        let d = log_likelihood(&sample_from(&doubled), &params, cfg).unwrap();
        assert_abs_diff_eq!(d, 2.0 * base, epsilon = 1e-13 * base.abs());

        let mut shifted = rows;
        shifted[1][0] += TAU;
        let v = log_likelihood(&sample_from(&shifted), &params, cfg).unwrap();
        assert_abs_diff_eq!(v, base, epsilon = 1e-12);
    }

    #[test]
    fn likelihood_is_exactly_periodic_on_canonical_points() {
        // 0.5 + 2π rounds back to exactly 0.5 when wrapped
        let y = 0.5;
        assert_eq!((y + TAU).rem_euclid(TAU), y);
        let params = WnParams::isotropic(&[0.3], 0.9).unwrap();
        let cfg = LatticeConfig::default();
        let a = wrapped_log_density(&AngleVector::new(&[y]).unwrap(), &params, cfg).unwrap();
        let b = wrapped_log_density(&AngleVector::new(&[y + TAU]).unwrap(), &params, cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_monotone_and_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 1..=2 {
            for sd in [PI / 8.0, PI / 2.0, PI] {
                let rows: Vec<Vec<f64>> =
                    (0..30).map(|_| (0..p).map(|_| rng.random_range(0.0..TAU)).collect()).collect();
                let s = TorusSample::from_rows(&rows).unwrap();
                let mut sigma = DMatrix::identity(p, p) * (sd * sd);
                if p == 2 {
                    sigma[(0, 1)] = 0.5 * sd * sd;
                    sigma[(1, 0)] = 0.5 * sd * sd;
                }
                let params = WnParams::new(&vec![1.0; p], sigma).unwrap();
                let vals: Vec<f64> =
                    (0..=6).map(|j| log_likelihood(&s, &params, LatticeConfig::new(j)).unwrap()).collect();
                for w in vals.windows(2) {
                    assert!(w[1] >= w[0] - 1e-12 * w[0].abs(), "{vals:?}");
                }
                assert!((vals[3] - vals[6]).abs() < 1e-8, "sd {sd}: {vals:?}");
            }
        }
    }
}

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, WnError};
use crate::linalg;

/// Target of the random correlation generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    pub p: usize,
    /// Condition number to reach.
    pub cn: f64,
    /// Relative tolerance on the achieved condition number.
    pub tol: f64,
    pub max_rounds: usize,
}

impl CorrelationSpec {
    pub fn new(p: usize, cn: f64) -> Self {
        CorrelationSpec { p, cn, tol: 1e-3, max_rounds: 100 }
    }

    fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(WnError::InvalidArgument(format!("correlation needs p >= 2, got {}", self.p)));
        }
        if !(self.cn > 1.0) || !self.cn.is_finite() {
            return Err(WnError::InvalidArgument(format!("condition number must exceed 1, got {}", self.cn)));
        }
        if !(self.tol > 0.0) || self.max_rounds == 0 {
            return Err(WnError::InvalidArgument("tol must be positive and max_rounds >= 1".into()));
        }
        Ok(())
    }

    fn accepts(&self, cond: f64) -> bool {
        cond >= self.cn / (1.0 + self.tol) && cond <= self.cn * (1.0 + self.tol)
    }
}

/// Random correlation matrix with condition number `spec.cn`.
///
/// Eigenvalues `1 = λ_1 ≤ … ≤ λ_p = cn` with the interior ones uniform, a
/// random orthogonal basis from the eigenvectors of `YᵀY`, rescaling to unit
/// diagonal, then rounds of resetting the largest eigenvalue to `cn` times the
/// smallest followed by rescaling until the condition number is within
/// tolerance.
pub fn random_correlation<R: Rng + ?Sized>(spec: &CorrelationSpec, rng: &mut R) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let p = spec.p;

    let mut lambda: Vec<f64> = (0..p - 2).map(|_| rng.random_range(1.0..spec.cn)).collect();
    lambda.sort_by(f64::total_cmp);
    lambda.insert(0, 1.0);
    lambda.push(spec.cn);

    let y = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
    let u = SymmetricEigen::new(y.transpose() * &y).eigenvectors;
    let sigma = &u * DMatrix::from_diagonal(&DVector::from_vec(lambda)) * u.transpose();

    let mut r = to_correlation(&sigma);
    let mut cond = f64::NAN;
    for _ in 0..spec.max_rounds {
        r = to_correlation(&reset_largest(&r, spec.cn));
        cond = linalg::condition_number(&r);
        if spec.accepts(cond) {
            return Ok(r);
        }
    }
    Err(WnError::CorrelationNotConverged { rounds: spec.max_rounds, achieved: cond })
}

/// `D^{-1/2} Σ D^{-1/2}` with the diagonal set to exactly one.
fn to_correlation(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let p = sigma.nrows();
    let scale: Vec<f64> = (0..p).map(|i| sigma[(i, i)].sqrt()).collect();
    let mut r = DMatrix::from_fn(p, p, |i, j| sigma[(i, j)] / (scale[i] * scale[j]));
    linalg::symmetrize(&mut r);
    for i in 0..p {
        r[(i, i)] = 1.0;
    }
    r
}

fn reset_largest(r: &DMatrix<f64>, cn: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(r.clone());
    let mut values = eig.eigenvalues.clone();
    let (imin, imax) = (values.imin(), values.imax());
    values[imax] = cn * values[imin];
    &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose()
}

/// `σ0² R`.
pub fn scale_to_covariance(r: &DMatrix<f64>, sigma0: f64) -> Result<DMatrix<f64>> {
    if !(sigma0 > 0.0) || !sigma0.is_finite() {
        return Err(WnError::InvalidArgument(format!("sigma0 must be positive, got {sigma0}")));
    }
    Ok(r * (sigma0 * sigma0))
}

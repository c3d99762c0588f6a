//! Samples with a torus block and a linear block.
//!
//! The torus block is fitted on its own; its unobserved unwrapped values are
//! then replaced by a point estimate (the CEM reconstruction or the EM
//! conditional mean) and the cross covariance is read off the completed data.
//! Plugging in conditional means ignores their uncertainty, so the EM cross
//! term is biased toward zero when the wrapping is ambiguous.

use nalgebra::DMatrix;

use crate::cem::fit_cem;
use crate::circular::{initial_params, AngleVector, TorusSample, INIT_EIGEN_FLOOR};
use crate::em::{fit_em, posterior_moments, EmControl, FitResult};
use crate::error::{Result, WnError};
use crate::linalg;
use crate::model::{LatticeConfig, WnParams};

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    torus: TorusSample,
    linear: DMatrix<f64>,
}

impl MixedSample {
    /// `linear` holds one row per observation.
    pub fn new(torus: TorusSample, linear: DMatrix<f64>) -> Result<Self> {
        if linear.nrows() != torus.n() {
            return Err(WnError::DimensionMismatch { expected: torus.n(), found: linear.nrows() });
        }
        if linear.ncols() == 0 {
            return Err(WnError::Empty("linear block"));
        }
        if let Some(&bad) = linear.iter().find(|v| !v.is_finite()) {
            return Err(WnError::NonFinite(bad));
        }
        Ok(MixedSample { torus, linear })
    }

    pub fn torus(&self) -> &TorusSample {
        &self.torus
    }

    pub fn linear(&self) -> &DMatrix<f64> {
        &self.linear
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedParams {
    pub mu1: AngleVector,
    pub mu2: Vec<f64>,
    pub sigma11: DMatrix<f64>,
    pub sigma12: DMatrix<f64>,
    pub sigma22: DMatrix<f64>,
}

impl MixedParams {
    /// The `(p1 + p2)`-square joint covariance.
    pub fn joint_sigma(&self) -> DMatrix<f64> {
        let (p1, p2) = (self.sigma11.nrows(), self.sigma22.nrows());
        let mut s = DMatrix::zeros(p1 + p2, p1 + p2);
        s.view_mut((0, 0), (p1, p1)).copy_from(&self.sigma11);
        s.view_mut((0, p1), (p1, p2)).copy_from(&self.sigma12);
        s.view_mut((p1, 0), (p2, p1)).copy_from(&self.sigma12.transpose());
        s.view_mut((p1, p1), (p2, p2)).copy_from(&self.sigma22);
        s
    }
}

#[derive(Debug, Clone)]
pub struct MixedFitResult {
    pub params: MixedParams,
    /// Whether the joint covariance was clipped to make it positive definite.
    pub repaired: bool,
    /// Fit of the torus block alone.
    pub torus: FitResult,
}

fn column_means(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols()).map(|k| x.column(k).mean()).collect()
}

/// Population cross covariance of the columns of `a` and `b`.
fn cross_cov(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() as f64;
    let (ma, mb) = (column_means(a), column_means(b));
    DMatrix::from_fn(a.ncols(), b.ncols(), |r, s| {
        a.column(r).iter().zip(b.column(s).iter()).map(|(x, y)| (x - ma[r]) * (y - mb[s])).sum::<f64>() / n
    })
}

fn linear_marginal(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let mut s = cross_cov(x, x);
    linalg::symmetrize(&mut s);
    (column_means(x), s)
}

fn assemble(torus: FitResult, completed: &DMatrix<f64>, linear: &DMatrix<f64>) -> MixedFitResult {
    let (mu2, sigma22) = linear_marginal(linear);
    let mut params = MixedParams {
        mu1: torus.params.mu().clone(),
        mu2,
        sigma11: torus.params.sigma().clone(),
        sigma12: cross_cov(completed, linear),
        sigma22,
    };
    let joint = params.joint_sigma();
    let mut repaired = false;
    if linalg::cholesky(&joint).is_err() {
        if let Some(fixed) = linalg::clip_spectrum(&joint, INIT_EIGEN_FLOOR) {
            let p1 = params.sigma11.nrows();
            let p2 = params.sigma22.nrows();
            params.sigma11 = fixed.view((0, 0), (p1, p1)).into_owned();
            params.sigma12 = fixed.view((0, p1), (p1, p2)).into_owned();
            params.sigma22 = fixed.view((p1, p1), (p2, p2)).into_owned();
            repaired = true;
        }
    }
    MixedFitResult { params, repaired, torus }
}

/// Classification EM on the torus block, then the joint moments of the
/// reconstructed points and the linear block.
pub fn fit_mixed_cem(sample: &MixedSample, config: LatticeConfig, ctrl: EmControl) -> Result<MixedFitResult> {
    let init = initial_params(&sample.torus)?;
    let cem = fit_cem(&sample.torus, &init, config, ctrl)?;
    Ok(assemble(cem.fit, &cem.unwrapped, &sample.linear))
}

/// EM on the torus block; conditional means stand in for the unwrapped
/// values in the cross covariance. The linear mean and covariance use the
/// linear block alone.
pub fn fit_mixed_em(sample: &MixedSample, config: LatticeConfig, ctrl: EmControl) -> Result<MixedFitResult> {
    let init = initial_params(&sample.torus)?;
    let fit = fit_em(&sample.torus, &init, config, ctrl)?;
    let moments = posterior_moments(&sample.torus, &fit.params, config)?;
    let p1 = sample.torus.p();
    let completed = DMatrix::from_fn(moments.len(), p1, |i, k| moments[i].mean[k]);
    Ok(assemble(fit, &completed, &sample.linear))
}

/// Convenience for callers holding the torus fit parameters already.
pub fn mixed_from_params(params: &WnParams, completed: &DMatrix<f64>, linear: &DMatrix<f64>) -> Result<MixedParams> {
    if completed.nrows() != linear.nrows() || completed.ncols() != params.p() {
        return Err(WnError::DimensionMismatch { expected: params.p(), found: completed.ncols() });
    }
    let (mu2, sigma22) = linear_marginal(linear);
    Ok(MixedParams {
        mu1: params.mu().clone(),
        mu2,
        sigma11: params.sigma().clone(),
        sigma12: cross_cov(completed, linear),
        sigma22,
    })
}

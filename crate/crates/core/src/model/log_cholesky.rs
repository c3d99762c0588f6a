//! Log-Cholesky coordinates: an unconstrained vector that always maps to a
//! positive definite covariance.
//!
//! `Σ = Rᵀ R` with `R` upper triangular. The vector holds `μ` (p entries)
//! followed by the upper triangle of `R` row by row, with each diagonal entry
//! replaced by its logarithm.

use nalgebra::DMatrix;

use super::{NormalKernel, WnParams};
use crate::error::{Result, WnError};
use crate::linalg;

#[derive(Debug, Clone, PartialEq)]
pub struct LogCholeskyParams {
    pub theta: Vec<f64>,
}

impl LogCholeskyParams {
    pub fn len_for(p: usize) -> usize {
        p + p * (p + 1) / 2
    }

    /// Mean part and the lower factor `L = Rᵀ` without forming Σ.
    pub(crate) fn unpack(&self, p: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if self.theta.len() != Self::len_for(p) {
            return Err(WnError::DimensionMismatch { expected: Self::len_for(p), found: self.theta.len() });
        }
        if let Some(&bad) = self.theta.iter().find(|v| !v.is_finite()) {
            return Err(WnError::NonFinite(bad));
        }
        let mu = self.theta[..p].to_vec();
        let mut l = DMatrix::zeros(p, p);
        let mut it = self.theta[p..].iter();
        for i in 0..p {
            for j in i..p {
                let v = *it.next().expect("length checked");
                // R[i][j] is L[j][i]
                l[(j, i)] = if i == j { v.exp() } else { v };
            }
        }
        Ok((mu, l))
    }

    pub(crate) fn normal_kernel(&self, p: usize) -> Result<NormalKernel> {
        let (mu, l) = self.unpack(p)?;
        Ok(NormalKernel::from_factor(&mu, l))
    }
}

pub fn to_log_cholesky(params: &WnParams) -> Result<LogCholeskyParams> {
    let p = params.p();
    let l = linalg::cholesky(params.sigma())?.unpack();
    let mut theta = Vec::with_capacity(LogCholeskyParams::len_for(p));
    theta.extend_from_slice(params.mu().as_slice());
    for i in 0..p {
        for j in i..p {
            let v = l[(j, i)];
            theta.push(if i == j { v.ln() } else { v });
        }
    }
    Ok(LogCholeskyParams { theta })
}

pub fn from_log_cholesky(theta: &LogCholeskyParams, p: usize) -> Result<WnParams> {
    let (mu, l) = theta.unpack(p)?;
    let sigma = &l * l.transpose();
    WnParams::new(&mu, sigma)
}

//! Shared evaluation machinery for normal and wrapped normal densities.
//!
//! A [`WrappedKernel`] factors Σ once and pre-whitens every lattice shift, so
//! each observation costs one triangular solve plus `O(p)` work per lattice row.

use std::f64::consts::TAU;

use nalgebra::DMatrix;

use super::lattice::Lattice;
use crate::circular::center_into;
use crate::error::Result;
use crate::linalg;

const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone)]
pub(crate) struct NormalKernel {
    mean: Vec<f64>,
    /// lower Cholesky factor of Σ
    l: DMatrix<f64>,
    log_norm: f64,
}

impl NormalKernel {
    pub(crate) fn new(mean: &[f64], sigma: &DMatrix<f64>) -> Result<Self> {
        let chol = linalg::cholesky(sigma)?;
        Ok(Self::from_factor(mean, chol.unpack()))
    }

    /// `l` must be lower triangular with a positive diagonal.
    pub(crate) fn from_factor(mean: &[f64], l: DMatrix<f64>) -> Self {
        let p = mean.len();
        let half_log_det: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
        NormalKernel {
            mean: mean.to_vec(),
            l,
            log_norm: -(p as f64) * HALF_LN_TAU - half_log_det,
        }
    }

    pub(crate) fn p(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub(crate) fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Solves `L z = d` by forward substitution.
    #[inline]
    pub(crate) fn whiten(&self, d: &[f64], z: &mut [f64]) {
        let p = d.len();
        for i in 0..p {
            let mut acc = d[i];
            for k in 0..i {
                acc -= self.l[(i, k)] * z[k];
            }
            z[i] = acc / self.l[(i, i)];
        }
    }

    pub(crate) fn log_pdf(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut z = vec![0.0; d.len()];
        self.whiten(&d, &mut z);
        self.log_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Per-thread buffers for [`WrappedKernel::log_terms`].
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    pub(crate) centered: Vec<f64>,
    diff: Vec<f64>,
    pub(crate) whitened: Vec<f64>,
    pub(crate) terms: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(p: usize, rows: usize) -> Self {
        Scratch { centered: vec![0.0; p], diff: vec![0.0; p], whitened: vec![0.0; p], terms: vec![0.0; rows] }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct WrappedKernel<'a> {
    normal: NormalKernel,
    lattice: &'a Lattice,
    /// row r holds `L^{-1} (2π J_r)`
    shifts: Vec<f64>,
}

impl<'a> WrappedKernel<'a> {
    pub(crate) fn new(normal: NormalKernel, lattice: &'a Lattice) -> Self {
        let p = normal.p();
        debug_assert_eq!(p, lattice.p());
        let mut shifts = vec![0.0; lattice.len() * p];
        let mut d = vec![0.0; p];
        for (row, out) in lattice.iter().zip(shifts.chunks_exact_mut(p)) {
            for (dk, &jk) in d.iter_mut().zip(row) {
                *dk = TAU * jk as f64;
            }
            normal.whiten(&d, out);
        }
        WrappedKernel { normal, lattice, shifts }
    }

    pub(crate) fn normal(&self) -> &NormalKernel {
        &self.normal
    }

    pub(crate) fn lattice(&self) -> &Lattice {
        self.lattice
    }

    pub(crate) fn scratch(&self) -> Scratch {
        Scratch::new(self.normal.p(), self.lattice.len())
    }

    /// Recenters `y` about the kernel mean into `s.centered`, fills `s.terms`
    /// with the normal log-density at every lattice shift and returns their
    /// log-sum-exp.
    pub(crate) fn log_terms(&self, y: &[f64], s: &mut Scratch) -> f64 {
        let p = self.normal.p();
        center_into(y, self.normal.mean(), &mut s.centered);
        for ((d, c), m) in s.diff.iter_mut().zip(&s.centered).zip(self.normal.mean()) {
            *d = c - m;
        }
        self.normal.whiten(&s.diff, &mut s.whitened);
        let log_norm = self.normal.log_norm();
        for (t, b) in s.terms.iter_mut().zip(self.shifts.chunks_exact(p)) {
            let mut q = 0.0;
            for (a, bk) in s.whitened.iter().zip(b) {
                let z = a + bk;
                q += z * z;
            }
            *t = log_norm - 0.5 * q;
        }
        log_sum_exp(&s.terms)
    }
}

/// Numerically stable `log Σ exp(v_i)`, summed in slice order.
pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + v.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

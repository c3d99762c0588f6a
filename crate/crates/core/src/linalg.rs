//! Small dense helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Result, WnError};

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(WnError::SingularCovariance);
    }
    let chol = Cholesky::new(m.clone()).ok_or(WnError::SingularCovariance)?;
    if chol.l_dirty().diagonal().iter().any(|d| *d <= 0.0 || !d.is_finite()) {
        return Err(WnError::SingularCovariance);
    }
    Ok(chol)
}

/// Sum of log diagonal entries of a Cholesky factor, i.e. half the log-determinant.
pub(crate) fn half_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum()
}

pub(crate) fn eigenvalues_sorted(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Floors the spectrum of a symmetric matrix at `rel_floor * lambda_max`.
///
/// Returns `None` when every eigenvalue already clears the floor.
pub(crate) fn clip_spectrum(m: &DMatrix<f64>, rel_floor: f64) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = rel_floor * lmax.max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return None;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Some(out)
}

/// Mean and covariance with divisor n of the rows of a row-major n x p buffer.
pub(crate) fn mean_and_population_cov(data: &[f64], n: usize, p: usize) -> (DVector<f64>, DMatrix<f64>) {
    debug_assert_eq!(data.len(), n * p);
    let mut mean = DVector::zeros(p);
    for row in data.chunks_exact(p) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(p, p);
    for row in data.chunks_exact(p) {
        for a in 0..p {
            let da = row[a] - mean[a];
            for b in a..p {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    cov /= n as f64;
    for a in 0..p {
        for b in (a + 1)..p {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mean, cov)
}

/// Largest over smallest eigenvalue.
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = eigenvalues_sorted(m);
    ev[ev.len() - 1] / ev[0]
}

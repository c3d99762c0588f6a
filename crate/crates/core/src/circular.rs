//! Angles on the circle, circular summary statistics and starting values.
//!
//! Angles are stored canonically in `[0, 2π)`. Differences from a reference
//! angle are expressed in `(-π, π]`, so a difference of exactly `-π` maps to
//! `+π`.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;

use crate::error::{Result, WnError};
use crate::linalg;
use crate::model::WnParams;

/// Resultant lengths below this are treated as zero.
const RESULTANT_EPS: f64 = 1e-12;

/// Relative eigenvalue floor used to repair a non-PD starting covariance.
pub const INIT_EIGEN_FLOOR: f64 = 1e-6;

/// An angle in radians, canonically in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Angle(f64);

impl Angle {
    pub fn new(x: f64) -> Result<Self> {
        wrap_angle(x)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Angle> for f64 {
    fn from(a: Angle) -> f64 {
        a.0
    }
}

/// Reduces `x` modulo 2π into `[0, 2π)`.
///
/// ```
/// use wntorus::circular::wrap_angle;
/// let a = wrap_angle(-0.5).unwrap();
/// assert!((a.value() - (std::f64::consts::TAU - 0.5)).abs() < 1e-15);
/// ```
pub fn wrap_angle(x: f64) -> Result<Angle> {
    if !x.is_finite() {
        return Err(WnError::NonFinite(x));
    }
    Ok(Angle(wrap_unchecked(x)))
}

#[inline]
pub(crate) fn wrap_unchecked(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly 2π
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Maps a difference into `(-π, π]`.
#[inline]
pub(crate) fn principal_difference(d: f64) -> f64 {
    PI - (PI - d).rem_euclid(TAU)
}

/// A vector of canonical angles.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleVector(Vec<f64>);

impl AngleVector {
    /// Wraps every component into `[0, 2π)`.
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(WnError::Empty("angle vector"));
        }
        values
            .iter()
            .map(|&v| wrap_angle(v).map(f64::from))
            .collect::<Result<Vec<_>>>()
            .map(AngleVector)
    }

    pub fn zeros(p: usize) -> Self {
        AngleVector(vec![0.0; p])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Angle {
        Angle(self.0[i])
    }
}

/// An `n x p` sample of points on the p-torus, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusSample {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl TorusSample {
    /// Builds a sample from rows, wrapping every value into `[0, 2π)`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(WnError::Empty("torus sample"));
        }
        let p = rows[0].as_ref().len();
        if p == 0 {
            return Err(WnError::Empty("torus sample row"));
        }
        let mut data = Vec::with_capacity(n * p);
        for row in rows {
            let row = row.as_ref();
            if row.len() != p {
                return Err(WnError::DimensionMismatch { expected: p, found: row.len() });
            }
            for &v in row {
                data.push(wrap_angle(v)?.value());
            }
        }
        Ok(TorusSample { n, p, data })
    }

    /// Builds a sample from a row-major buffer of length `n * p`.
    pub fn from_row_major(data: &[f64], p: usize) -> Result<Self> {
        if p == 0 || data.is_empty() {
            return Err(WnError::Empty("torus sample"));
        }
        if data.len() % p != 0 {
            return Err(WnError::DimensionMismatch { expected: p, found: data.len() % p });
        }
        let data = data
            .iter()
            .map(|&v| wrap_angle(v).map(f64::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(TorusSample { n: data.len() / p, p, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.p)
    }

    pub fn column(&self, r: usize) -> Vec<f64> {
        self.rows().map(|row| row[r]).collect()
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }
}

/// Representative of `y` closest to `mu`: each component of the result minus
/// `mu` lies in `(-π, π]`.
pub fn center_to(y: &AngleVector, mu: &AngleVector) -> Result<Vec<f64>> {
    if y.len() != mu.len() {
        return Err(WnError::DimensionMismatch { expected: mu.len(), found: y.len() });
    }
    let mut out = vec![0.0; y.len()];
    center_into(y.as_slice(), mu.as_slice(), &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn center_into(y: &[f64], mu: &[f64], out: &mut [f64]) {
    for ((o, &yi), &mi) in out.iter_mut().zip(y).zip(mu) {
        *o = mi + principal_difference(yi - mi);
    }
}

fn trig_means(angles: &[f64]) -> Result<(f64, f64)> {
    if angles.is_empty() {
        return Err(WnError::Empty("angle list"));
    }
    let n = angles.len() as f64;
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), &a| (s + a.sin(), c + a.cos()));
    Ok((s / n, c / n))
}

/// Direction of the mean unit vector.
pub fn circular_mean(angles: &[f64]) -> Result<Angle> {
    let (s, c) = trig_means(angles)?;
    if s.hypot(c) < RESULTANT_EPS {
        return Err(WnError::DegenerateStatistic(
            "mean resultant length is zero; circular mean undefined".into(),
        ));
    }
    Ok(Angle(wrap_unchecked(s.atan2(c))))
}

/// Length of the mean unit vector, in `[0, 1]`.
pub fn mean_resultant_length(angles: &[f64]) -> Result<f64> {
    let (s, c) = trig_means(angles)?;
    Ok(s.hypot(c).min(1.0))
}

/// Sine-based circular correlation coefficient of two paired samples.
pub fn circular_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(WnError::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if x.len() < 2 {
        return Err(WnError::DegenerateStatistic(
            "circular correlation needs at least two pairs".into(),
        ));
    }
    let xbar = circular_mean(x)?.value();
    let ybar = circular_mean(y)?.value();
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let sa = (a - xbar).sin();
        let sb = (b - ybar).sin();
        sxy += sa * sb;
        sxx += sa * sa;
        syy += sb * sb;
    }
    let tiny = x.len() as f64 * 1e-24;
    if sxx <= tiny || syy <= tiny {
        return Err(WnError::DegenerateStatistic(
            "a sample has no spread about its circular mean".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Sum over components of `1 - cos(a_i - b_i)`, in `[0, 2p]`.
pub fn angle_separation(mu_hat: &[f64], mu0: &[f64]) -> Result<f64> {
    if mu_hat.len() != mu0.len() {
        return Err(WnError::DimensionMismatch { expected: mu0.len(), found: mu_hat.len() });
    }
    Ok(mu_hat.iter().zip(mu0).map(|(a, b)| 1.0 - (a - b).cos()).sum())
}

/// Starting values together with a flag telling whether the covariance had
/// to be repaired.
#[derive(Debug, Clone)]
pub struct InitialEstimate {
    pub params: WnParams,
    pub repaired: bool,
}

/// Moment-based starting values: circular means, `-2 log ρ̂` variances and
/// circular-correlation covariances.
pub fn initial_params(sample: &TorusSample) -> Result<WnParams> {
    initial_estimate(sample).map(|e| e.params)
}

/// Same as [`initial_params`], reporting whether eigenvalue clipping was used.
pub fn initial_estimate(sample: &TorusSample) -> Result<InitialEstimate> {
    if sample.n() < 2 {
        return Err(WnError::DegenerateInit("need at least two observations".into()));
    }
    let p = sample.p();
    let columns: Vec<Vec<f64>> = (0..p).map(|r| sample.column(r)).collect();
    let mut mu = Vec::with_capacity(p);
    let mut var = Vec::with_capacity(p);
    for (r, col) in columns.iter().enumerate() {
        let rho = mean_resultant_length(col)?;
        if rho < RESULTANT_EPS {
            return Err(WnError::DegenerateInit(format!(
                "column {r} has zero mean resultant length (infinite variance)"
            )));
        }
        let v = -2.0 * rho.ln();
        if v < RESULTANT_EPS {
            return Err(WnError::DegenerateInit(format!(
                "column {r} has unit mean resultant length (zero variance)"
            )));
        }
        mu.push(circular_mean(col)?.value());
        var.push(v);
    }
    let mut sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(var.clone()));
    for r in 0..p {
        for s in (r + 1)..p {
            let rc = circular_correlation(&columns[r], &columns[s])?;
            let c = rc * (var[r] * var[s]).sqrt();
            sigma[(r, s)] = c;
            sigma[(s, r)] = c;
        }
    }
    let repaired = match linalg::clip_spectrum(&sigma, INIT_EIGEN_FLOOR) {
        Some(fixed) => {
            sigma = fixed;
            true
        }
        None => false,
    };
    Ok(InitialEstimate { params: WnParams::new(&mu, sigma)?, repaired })
}

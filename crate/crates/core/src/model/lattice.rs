//! The truncated lattice of wrapping coefficients.

use crate::error::{Result, WnError};

/// Largest number of lattice rows accepted.
pub const MAX_LATTICE_ROWS: usize = 100_000_000;

/// Truncation level `J`: wrapping coefficients range over `{-J, ..., J}^p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeConfig {
    pub j: usize,
}

impl LatticeConfig {
    pub const DEFAULT_J: usize = 3;

    pub fn new(j: usize) -> Self {
        LatticeConfig { j }
    }

    /// `(2J + 1)^p`, or an error when it overflows or exceeds [`MAX_LATTICE_ROWS`].
    pub fn row_count(&self, p: usize) -> Result<usize> {
        let too_large = || WnError::LatticeTooLarge { j: self.j, p, limit: MAX_LATTICE_ROWS };
        let side = self.j.checked_mul(2).and_then(|v| v.checked_add(1)).ok_or_else(too_large)?;
        let mut count: usize = 1;
        for _ in 0..p {
            count = count.checked_mul(side).ok_or_else(too_large)?;
            if count > MAX_LATTICE_ROWS {
                return Err(too_large());
            }
        }
        Ok(count)
    }

    pub fn lattice(&self, p: usize) -> Result<Lattice> {
        Lattice::new(*self, p)
    }
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig { j: Self::DEFAULT_J }
    }
}

/// One vector of wrapping coefficients.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LatticeRow(pub Vec<i32>);

/// All rows of `{-J, ..., J}^p` in lexicographic order, stored flat.
#[derive(Debug, Clone)]
pub struct Lattice {
    j: usize,
    p: usize,
    rows: Vec<i32>,
}

impl Lattice {
    pub fn new(config: LatticeConfig, p: usize) -> Result<Self> {
        let count = config.row_count(p)?;
        let j = config.j as i32;
        let mut rows = Vec::with_capacity(count * p);
        let mut current = vec![-j; p];
        for _ in 0..count {
            rows.extend_from_slice(&current);
            // odometer, last coordinate fastest
            for k in (0..p).rev() {
                if current[k] < j {
                    current[k] += 1;
                    break;
                }
                current[k] = -j;
            }
        }
        Ok(Lattice { j: config.j, p, rows })
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.p.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, r: usize) -> &[i32] {
        &self.rows[r * self.p..(r + 1) * self.p]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i32]> + '_ {
        self.rows.chunks_exact(self.p)
    }

    /// Index of the all-zero row.
    pub fn zero_index(&self) -> usize {
        (self.len() - 1) / 2
    }
}

/// Every lattice row for dimension `p`, smallest first.
pub fn lattice_rows(config: LatticeConfig, p: usize) -> Result<Vec<LatticeRow>> {
    Ok(config.lattice(p)?.iter().map(|r| LatticeRow(r.to_vec())).collect())
}

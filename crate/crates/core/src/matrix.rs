//! Row-major moment matrices and the handful of small dense solves the
//! estimators need.

use nalgebra::{DMatrix, DVector};

/// An `n x q` matrix of moment values, one row `g_i` per observation.
///
/// Stored row-major so that the per-observation loops in the inner solver
/// touch contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MomentMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from row-major data. Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "moment matrix shape mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged moment rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Number of observations `n`.
    pub fn nrows(&self) -> usize {
        self.rows
    }

    /// Moment dimension `q`.
    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column means `ḡ`.
    pub fn column_means(&self) -> DVector<f64> {
        let mut mean = DVector::zeros(self.cols);
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean / self.rows as f64
    }

    /// Uncentered second-moment matrix `Ω̂ = (1/n) Σ g_i g_i'`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let q = self.cols;
        let mut acc = vec![0.0; q * q];
        for row in self.rows() {
            for (a, &ga) in row.iter().enumerate() {
                for (cell, gb) in acc[a * q + a..(a + 1) * q].iter_mut().zip(&row[a..]) {
                    *cell += ga * gb;
                }
            }
        }
        let nf = self.rows as f64;
        DMatrix::from_fn(q, q, |a, b| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            acc[lo * q + hi] / nf
        })
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Ratio of the smallest to the largest eigenvalue of a symmetric matrix.
/// Returns 0 for matrices with a nonpositive eigenvalue.
pub(crate) fn condition_ratio(sym: &DMatrix<f64>) -> f64 {
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || !(min > 0.0) {
        0.0
    } else {
        min / max
    }
}

/// Numerically positive definite in the sense used throughout the crate:
/// smallest eigenvalue above `1e-12` times the largest.
pub(crate) fn is_well_conditioned_spd(sym: &DMatrix<f64>) -> bool {
    condition_ratio(sym) > 1e-12
}

/// Solves `a x = b` with partial pivoting. `None` when the factorization is
/// singular or produces non-finite values.
pub(crate) fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub(crate) fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = a.clone().try_inverse()?;
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_and_second_moment() {
        let g = MomentMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -2.0]]);
        let m = g.column_means();
        assert_eq!(m.as_slice(), &[2.0, 0.0]);
        let omega = g.second_moment();
        assert_eq!(omega[(0, 0)], 5.0);
        assert_eq!(omega[(0, 1)], -2.0);
        assert_eq!(omega[(1, 0)], -2.0);
        assert_eq!(omega[(1, 1)], 4.0);
    }

    #[test]
    fn conditioning() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!(is_well_conditioned_spd(&id));
        let rank1 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(!is_well_conditioned_spd(&rank1));
    }

    #[test]
    fn select_rows_keeps_order() {
        let g = MomentMatrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
        let s = g.select_rows(&[2, 0]);
        assert_eq!(s.as_slice(), &[3.0, 1.0]);
    }
}

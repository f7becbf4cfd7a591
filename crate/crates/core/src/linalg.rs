//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! The kernel systems solved here are at most a few hundred rows, so a plain
//! Cholesky with explicit pivot reporting is all that is needed.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not numerically positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Lower-triangular Cholesky factor `L` with `M = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    pub fn factor(m: &DMatrix<f64>) -> Result<Self, LinalgError> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: m.ncols(),
            });
        }
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Smallest diagonal entry of the factor.
    pub fn min_pivot(&self) -> f64 {
        self.l.diagonal().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Solves `M X = B` for a right-hand side with any number of columns.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: b.nrows(),
            });
        }
        let mut x = b.clone();
        for c in 0..x.ncols() {
            // forward: L y = b
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
            // backward: Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = self
            .solve(&DMatrix::identity(n, n))
            .expect("identity has matching dimension");
        // symmetrize away rounding asymmetry
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// Adds `lambda` to the diagonal of a square matrix.
pub fn add_ridge(m: &mut DMatrix<f64>, lambda: f64) {
    for i in 0..m.nrows().min(m.ncols()) {
        m[(i, i)] += lambda;
    }
}

/// Row-wise Euclidean norms.
pub fn row_norms(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m.row(i).norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_system() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 3.0, -1.0]);
        let x = Cholesky::factor(&m).unwrap().solve(&b).unwrap();
        let r = &m * &x - &b;
        assert!(r.amax() < 1e-14);
    }

    #[test]
    fn reports_failing_pivot() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match Cholesky::factor(&m) {
            Err(LinalgError::NotPositiveDefinite { index, pivot }) => {
                assert_eq!(index, 1);
                assert!(pivot.abs() < 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inverse_is_symmetric_and_correct() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let inv = Cholesky::factor(&m).unwrap().inverse();
        assert!((&m * &inv - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert_eq!(inv[(0, 1)], inv[(1, 0)]);
    }
}

//! Vector-valued regularized kernel regression with f-greedy center selection.
//!
//! A model is the expansion `s(x) = Σ_i α_i k(x, c_i)` with coefficient rows
//! `α_i ∈ R^b`. [`fit_full`] uses every training point as a center;
//! [`fit_greedy`] grows the center set one point at a time, always adding the
//! point with the largest Euclidean residual norm and re-solving the
//! regularized system `(K_CC + λI) α = Y_C` on the selected centers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{matrix_to_rows, rows_to_matrix, Kernel, KernelError};
use crate::linalg::{add_ridge, Cholesky, LinalgError};

/// Greedy selection stops once the largest residual norm drops below this.
pub const RESIDUAL_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("no training points")]
    Empty,
    #[error("{inputs} input rows but {targets} target rows")]
    RowMismatch { inputs: usize, targets: usize },
    #[error("training points {0} and {1} coincide")]
    DuplicatePoints(usize, usize),
    #[error("requested {requested} centers but only {available} points are available")]
    TooManyCenters { requested: usize, available: usize },
    #[error("regularization must be non-negative and finite, got {0}")]
    InvalidLambda(f64),
    #[error("kernel system factorization failed: smallest pivot {pivot:e} at row {index}")]
    Factorization { index: usize, pivot: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl From<LinalgError> for FitError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotPositiveDefinite { index, pivot } => {
                FitError::Factorization { index, pivot }
            }
            LinalgError::DimensionMismatch { expected, got } => {
                FitError::Kernel(KernelError::DimensionMismatch { expected, got })
            }
        }
    }
}

/// A fitted sparse kernel expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct KernelModel {
    pub kernel: Kernel,
    /// `n × d`, one center per row.
    pub centers: DMatrix<f64>,
    /// `n × b`, one coefficient row per center.
    pub coefficients: DMatrix<f64>,
    pub lambda: f64,
    /// Training-set row of each center.
    pub center_indices: Vec<usize>,
}

impl KernelModel {
    pub fn n_centers(&self) -> usize {
        self.centers.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn predict(&self, x: &[f64]) -> Result<DVector<f64>, KernelError> {
        if x.len() != self.input_dim() {
            return Err(KernelError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let b = self.output_dim();
        let mut out = DVector::zeros(b);
        for i in 0..self.n_centers() {
            let c: Vec<f64> = self.centers.row(i).iter().cloned().collect();
            let k = self.kernel.eval(x, &c)?;
            for j in 0..b {
                out[j] += k * self.coefficients[(i, j)];
            }
        }
        Ok(out)
    }

    /// Predicts every row of `x`; row `i` equals `predict(x_i)` exactly.
    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        let mut out = DMatrix::zeros(x.nrows(), self.output_dim());
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().cloned().collect();
            out.set_row(i, &self.predict(&row)?.transpose());
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    kernel: Kernel,
    lambda: f64,
    output_dim: usize,
    centers: Vec<Vec<f64>>,
    coefficients: Vec<Vec<f64>>,
    center_indices: Vec<usize>,
}

impl From<KernelModel> for ModelRepr {
    fn from(m: KernelModel) -> Self {
        ModelRepr {
            output_dim: m.output_dim(),
            centers: matrix_to_rows(&m.centers),
            coefficients: matrix_to_rows(&m.coefficients),
            kernel: m.kernel,
            lambda: m.lambda,
            center_indices: m.center_indices,
        }
    }
}

impl TryFrom<ModelRepr> for KernelModel {
    type Error = String;

    fn try_from(r: ModelRepr) -> Result<Self, Self::Error> {
        let centers = rows_to_matrix(&r.centers).ok_or("ragged centers")?;
        let mut coefficients = rows_to_matrix(&r.coefficients).ok_or("ragged coefficients")?;
        if coefficients.nrows() == 0 {
            coefficients = DMatrix::zeros(0, r.output_dim);
        }
        if centers.nrows() != coefficients.nrows() || r.center_indices.len() != centers.nrows() {
            return Err("center and coefficient counts differ".into());
        }
        if coefficients.ncols() != r.output_dim {
            return Err("coefficient width differs from output_dim".into());
        }
        Ok(KernelModel {
            kernel: r.kernel,
            centers,
            coefficients,
            lambda: r.lambda,
            center_indices: r.center_indices,
        })
    }
}

fn validate(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<(), FitError> {
    if x.nrows() == 0 {
        return Err(FitError::Empty);
    }
    if x.nrows() != y.nrows() {
        return Err(FitError::RowMismatch {
            inputs: x.nrows(),
            targets: y.nrows(),
        });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(FitError::InvalidLambda(lambda));
    }
    for i in 0..x.nrows() {
        for j in (i + 1)..x.nrows() {
            if x.row(i) == x.row(j) {
                return Err(FitError::DuplicatePoints(i, j));
            }
        }
    }
    Ok(())
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

fn select_block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Solves `(K + λI) α = Y` with every point as a center.
pub fn fit_full(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    kernel: &Kernel,
    lambda: f64,
) -> Result<KernelModel, FitError> {
    validate(x, y, lambda)?;
    let mut k = kernel.gram(x, x)?;
    add_ridge(&mut k, lambda);
    let alpha = Cholesky::factor(&k)?.solve(y)?;
    Ok(KernelModel {
        kernel: kernel.clone(),
        centers: x.clone(),
        coefficients: alpha,
        lambda,
        center_indices: (0..x.nrows()).collect(),
    })
}

/// Outcome of a greedy run on a precomputed kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedySelection {
    /// Selected rows of the kernel matrix, in selection order.
    pub centers: Vec<usize>,
    /// `n × b` coefficients for `centers`.
    pub coefficients: DMatrix<f64>,
    /// Largest residual norm over the not-yet-selected pool before each selection.
    pub max_residuals: Vec<f64>,
    /// Largest residual norm over the whole pool after the last refit.
    pub final_max_residual: f64,
}

/// f-greedy selection restricted to `pool`, using a precomputed symmetric
/// kernel matrix over all points and targets indexed the same way.
///
/// Ties in the residual norm go to the earliest position in `pool`.
pub fn greedy_on_gram(
    gram: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    pool: &[usize],
    lambda: f64,
    n_max: usize,
) -> Result<GreedySelection, FitError> {
    if n_max > pool.len() {
        return Err(FitError::TooManyCenters {
            requested: n_max,
            available: pool.len(),
        });
    }
    let b = targets.ncols();
    let y_pool = select_rows(targets, pool);
    let mut residual = y_pool.clone();
    let mut chosen_pos: Vec<usize> = Vec::with_capacity(n_max);
    let mut taken = vec![false; pool.len()];
    let mut centers = Vec::with_capacity(n_max);
    let mut max_residuals = Vec::with_capacity(n_max);
    let mut coefficients = DMatrix::zeros(0, b);

    for _ in 0..n_max {
        let mut best: Option<(usize, f64)> = None;
        for (p, &t) in taken.iter().enumerate() {
            if t {
                continue;
            }
            let r = residual.row(p).norm();
            if best.is_none_or(|(_, m)| r > m) {
                best = Some((p, r));
            }
        }
        let Some((p, r)) = best else { break };
        if r < RESIDUAL_TOLERANCE {
            break;
        }
        max_residuals.push(r);
        taken[p] = true;
        chosen_pos.push(p);
        centers.push(pool[p]);

        let mut kcc = select_block(gram, &centers, &centers);
        add_ridge(&mut kcc, lambda);
        coefficients = Cholesky::factor(&kcc)?.solve(&select_rows(targets, &centers))?;
        let kpc = select_block(gram, pool, &centers);
        residual = &y_pool - kpc * &coefficients;
    }

    let final_max_residual = (0..pool.len())
        .map(|p| residual.row(p).norm())
        .fold(0.0, f64::max);
    Ok(GreedySelection {
        centers,
        coefficients,
        max_residuals,
        final_max_residual,
    })
}

/// A greedy model plus its selection trace.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyFit {
    pub model: KernelModel,
    pub max_residuals: Vec<f64>,
    pub final_max_residual: f64,
}

pub fn fit_greedy(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    kernel: &Kernel,
    lambda: f64,
    n_max: usize,
) -> Result<GreedyFit, FitError> {
    validate(x, y, lambda)?;
    if n_max > x.nrows() {
        return Err(FitError::TooManyCenters {
            requested: n_max,
            available: x.nrows(),
        });
    }
    let gram = kernel.gram(x, x)?;
    let pool: Vec<usize> = (0..x.nrows()).collect();
    let sel = greedy_on_gram(&gram, y, &pool, lambda, n_max)?;
    Ok(GreedyFit {
        model: KernelModel {
            kernel: kernel.clone(),
            centers: select_rows(x, &sel.centers),
            coefficients: sel.coefficients,
            lambda,
            center_indices: sel.centers,
        },
        max_residuals: sel.max_residuals,
        final_max_residual: sel.final_max_residual,
    })
}

//! Radial kernels and their two-layered variant `k_A(x, y) = k(Ax, Ay)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape parameter must be positive and finite, got {0}")]
    InvalidShape(f64),
    #[error("first-layer matrix must be square and finite")]
    InvalidMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Matern1,
    Matern2,
    Gaussian,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [Self::Matern1, Self::Matern2, Self::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Matern1 => "matern1",
            Self::Matern2 => "matern2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    /// Radial profile `φ(r)` at unit shape, evaluated at `t = ε r`.
    #[inline]
    fn profile(self, t: f64) -> f64 {
        match self {
            Self::Gaussian => (-t * t).exp(),
            Self::Matern1 => (1.0 + t) * (-t).exp(),
            Self::Matern2 => (3.0 + 3.0 * t + t * t) * (-t).exp(),
        }
    }

    /// `φ'(t) / t` at unit shape; finite at `t = 0`.
    #[inline]
    fn derivative_over_t(self, t: f64) -> f64 {
        match self {
            Self::Gaussian => -2.0 * (-t * t).exp(),
            Self::Matern1 => -(-t).exp(),
            Self::Matern2 => -(1.0 + t) * (-t).exp(),
        }
    }
}

/// A shallow radial kernel: family plus shape (inverse length) parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub shape: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, shape: f64) -> Result<Self, KernelError> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(KernelError::InvalidShape(shape));
        }
        Ok(Self { family, shape })
    }

    /// `φ(r)` for distance `r ≥ 0`.
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        self.family.profile(self.shape * r)
    }

    /// `φ'(r) / r`, the factor in `∇_x k(x, y) = φ'(r)/r · (x − y)`.
    #[inline]
    pub fn radial_derivative_over_r(&self, r: f64) -> f64 {
        self.shape * self.shape * self.family.derivative_over_t(self.shape * r)
    }

    /// Value at `r = 0`.
    pub fn diagonal_value(&self) -> f64 {
        self.radial(0.0)
    }
}

fn check_dims(expected: usize, got: usize) -> Result<(), KernelError> {
    if expected != got {
        Err(KernelError::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    check_dims(x.len(), y.len())?;
    Ok(spec.radial(distance(x, y)))
}

/// Base kernel composed with a linear first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerKernelSpec {
    pub base: KernelSpec,
    pub a: DMatrix<f64>,
}

impl TwoLayerKernelSpec {
    pub fn new(base: KernelSpec, a: DMatrix<f64>) -> Result<Self, KernelError> {
        if !a.is_square() || a.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::InvalidMatrix);
        }
        Ok(Self { base, a })
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn transform(&self, x: &[f64]) -> Result<DVector<f64>, KernelError> {
        check_dims(self.dim(), x.len())?;
        Ok(&self.a * DVector::from_column_slice(x))
    }
}

pub fn eval_two_layer(spec: &TwoLayerKernelSpec, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
    check_dims(x.len(), y.len())?;
    let ax = spec.transform(x)?;
    let ay = spec.transform(y)?;
    eval(&spec.base, ax.as_slice(), ay.as_slice())
}

/// Either kernel kind, as stored in fitted models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelRepr", into = "KernelRepr")]
pub enum Kernel {
    Shallow(KernelSpec),
    TwoLayer(TwoLayerKernelSpec),
}

impl From<KernelSpec> for Kernel {
    fn from(s: KernelSpec) -> Self {
        Kernel::Shallow(s)
    }
}

impl From<TwoLayerKernelSpec> for Kernel {
    fn from(s: TwoLayerKernelSpec) -> Self {
        Kernel::TwoLayer(s)
    }
}

impl Kernel {
    pub fn base(&self) -> &KernelSpec {
        match self {
            Kernel::Shallow(s) => s,
            Kernel::TwoLayer(t) => &t.base,
        }
    }

    pub fn first_layer(&self) -> Option<&DMatrix<f64>> {
        match self {
            Kernel::Shallow(_) => None,
            Kernel::TwoLayer(t) => Some(&t.a),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        match self {
            Kernel::Shallow(s) => eval(s, x, y),
            Kernel::TwoLayer(t) => eval_two_layer(t, x, y),
        }
    }

    /// Maps points (rows) through the first layer, if any.
    pub fn embed(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        match self {
            Kernel::Shallow(_) => Ok(points.clone()),
            Kernel::TwoLayer(t) => {
                check_dims(t.dim(), points.ncols())?;
                Ok(points * t.a.transpose())
            }
        }
    }

    pub fn gram(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>, KernelError> {
        check_dims(x.ncols(), y.ncols())?;
        let ex = self.embed(x)?;
        let ey = self.embed(y)?;
        Ok(radial_gram(self.base(), &ex, &ey))
    }
}

/// Gram matrix `G[i][j] = k(x_i, y_j)` over rows of `x` and `y`.
pub fn gram(
    kernel: &Kernel,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<DMatrix<f64>, KernelError> {
    kernel.gram(x, y)
}

/// Pairwise distances between rows.
pub fn pairwise_distances(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let d = x.ncols();
    DMatrix::from_fn(x.nrows(), y.nrows(), |i, j| {
        let mut s = 0.0;
        for k in 0..d {
            let t = x[(i, k)] - y[(j, k)];
            s += t * t;
        }
        s.sqrt()
    })
}

fn radial_gram(spec: &KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    pairwise_distances(x, y).map(|r| spec.radial(r))
}

#[derive(Serialize, Deserialize)]
struct KernelRepr {
    family: KernelFamily,
    shape: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<Vec<f64>>>,
}

impl From<Kernel> for KernelRepr {
    fn from(k: Kernel) -> Self {
        match k {
            Kernel::Shallow(s) => KernelRepr {
                family: s.family,
                shape: s.shape,
                a: None,
            },
            Kernel::TwoLayer(t) => KernelRepr {
                family: t.base.family,
                shape: t.base.shape,
                a: Some(matrix_to_rows(&t.a)),
            },
        }
    }
}

impl TryFrom<KernelRepr> for Kernel {
    type Error = KernelError;

    fn try_from(r: KernelRepr) -> Result<Self, Self::Error> {
        let base = KernelSpec::new(r.family, r.shape)?;
        match r.a {
            None => Ok(Kernel::Shallow(base)),
            Some(rows) => {
                let a = rows_to_matrix(&rows).ok_or(KernelError::InvalidMatrix)?;
                Ok(Kernel::TwoLayer(TwoLayerKernelSpec::new(base, a)?))
            }
        }
    }
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

/// Row-major nested vectors to a matrix; `None` for ragged input.
pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return None;
    }
    Some(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

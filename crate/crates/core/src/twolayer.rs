//! First-layer optimization for two-layered kernels.
//!
//! The matrix `A` of `k_A(x, y) = k(Ax, Ay)` is trained by plain mini-batch
//! gradient descent on the closed-form leave-one-out loss of ridge kernel
//! regression on each batch. With `M = K + λI` and `α = M⁻¹Y` the held-out
//! residual of row `i` is `α_i / (M⁻¹)_ii`, so no refits are needed.

use nalgebra::{DMatrix, SVD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{pairwise_distances, Kernel, KernelError, KernelFamily, KernelSpec, TwoLayerKernelSpec};
use crate::linalg::{add_ridge, Cholesky, LinalgError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TwoLayerError {
    #[error("LOO system is singular (pivot {pivot:e}); raise the regularization")]
    Singular { pivot: f64 },
    #[error("non-finite loss or gradient at step {step}")]
    NonFinite { step: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{inputs} input rows but {targets} target rows")]
    RowMismatch { inputs: usize, targets: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl From<LinalgError> for TwoLayerError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotPositiveDefinite { pivot, .. } => TwoLayerError::Singular { pivot },
            LinalgError::DimensionMismatch { expected, got } => {
                TwoLayerError::Kernel(KernelError::DimensionMismatch { expected, got })
            }
        }
    }
}

/// Leave-one-out residuals of a ridge kernel fit on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LooResiduals {
    /// `batch × b`; row `i` is `y_i` minus the prediction of the model fitted without `i`.
    pub residuals: DMatrix<f64>,
    /// Mean squared Euclidean norm of the residual rows.
    pub loss: f64,
}

struct LooParts {
    inv: DMatrix<f64>,
    alpha: DMatrix<f64>,
    residuals: DMatrix<f64>,
    loss: f64,
}

fn check_rows(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(), TwoLayerError> {
    if x.nrows() != y.nrows() {
        return Err(TwoLayerError::RowMismatch {
            inputs: x.nrows(),
            targets: y.nrows(),
        });
    }
    Ok(())
}

fn loo_parts(mut k: DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<LooParts, TwoLayerError> {
    add_ridge(&mut k, lambda);
    let inv = Cholesky::factor(&k)?.inverse();
    let alpha = &inv * y;
    let n = y.nrows();
    let mut residuals = alpha.clone();
    for i in 0..n {
        let d = inv[(i, i)];
        residuals.row_mut(i).apply(|v| *v /= d);
    }
    let loss = residuals.iter().map(|v| v * v).sum::<f64>() / n as f64;
    Ok(LooParts {
        inv,
        alpha,
        residuals,
        loss,
    })
}

pub fn loo_residuals(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    kernel: &Kernel,
    lambda: f64,
) -> Result<LooResiduals, TwoLayerError> {
    check_rows(x, y)?;
    let p = loo_parts(kernel.gram(x, x)?, y, lambda)?;
    Ok(LooResiduals {
        residuals: p.residuals,
        loss: p.loss,
    })
}

/// LOO loss of the two-layered kernel `(base, A)` on a batch and its gradient with respect to `A`.
pub fn loo_loss_and_gradient(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    base: &KernelSpec,
    a: &DMatrix<f64>,
    lambda: f64,
) -> Result<(f64, DMatrix<f64>), TwoLayerError> {
    check_rows(x, y)?;
    if a.ncols() != x.ncols() {
        return Err(KernelError::DimensionMismatch {
            expected: a.ncols(),
            got: x.ncols(),
        }
        .into());
    }
    let n = x.nrows();
    let u = x * a.transpose();
    let dist = pairwise_distances(&u, &u);
    let k = dist.map(|r| base.radial(r));
    let LooParts {
        inv,
        alpha,
        residuals,
        loss,
    } = loo_parts(k, y, lambda)?;

    // dL/dK = (2/n) (−C W αᵀ + C diag(s) C), w_i = e_i / C_ii, s_i = ‖e_i‖² / C_ii
    let mut w = residuals.clone();
    let mut s = vec![0.0; n];
    for i in 0..n {
        let d = inv[(i, i)];
        s[i] = residuals.row(i).norm_squared() / d;
        w.row_mut(i).apply(|v| *v /= d);
    }
    let mut cs = inv.clone();
    for j in 0..n {
        cs.column_mut(j).apply(|v| *v *= s[j]);
    }
    let g = (&cs * &inv) - (&inv * &w) * alpha.transpose();

    // chain rule through K_jk = φ(‖A(x_j − x_k)‖)
    let scale = 2.0 / n as f64;
    let mut hs = DMatrix::zeros(n, n);
    for j in 0..n {
        for k2 in 0..n {
            if j != k2 {
                let psi = base.radial_derivative_over_r(dist[(j, k2)]);
                hs[(j, k2)] = scale * psi * (g[(j, k2)] + g[(k2, j)]);
            }
        }
    }
    let mut lap = -hs.clone();
    for j in 0..n {
        lap[(j, j)] = hs.row(j).sum();
    }
    // Σ_jk H_jk (u_j − u_k)(x_j − x_k)ᵀ = Uᵀ (diag((H + Hᵀ)1) − (H + Hᵀ)) X
    let grad = u.transpose() * lap * x;
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AInit {
    Identity,
    /// Identity divided by the median pairwise distance of the training inputs.
    MedianHeuristic,
    Given(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoLayerTrainConfig {
    pub family: KernelFamily,
    pub lambda: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    pub a_init: AInit,
}

impl Default for TwoLayerTrainConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern1,
            lambda: 1e-4,
            batch_size: 16,
            n_epochs: 500,
            learning_rate: 1e-2,
            rng_seed: 0,
            a_init: AInit::MedianHeuristic,
        }
    }
}

/// Result of [`optimize_a`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedFirstLayer {
    pub a: DMatrix<f64>,
    /// Batch loss before each applied update.
    pub loss_history: Vec<f64>,
    /// Steps whose batch system was singular and were skipped.
    pub skipped_steps: Vec<usize>,
}

impl TrainedFirstLayer {
    pub fn kernel(&self, family: KernelFamily) -> TwoLayerKernelSpec {
        TwoLayerKernelSpec {
            base: KernelSpec {
                family,
                shape: 1.0,
            },
            a: self.a.clone(),
        }
    }
}

pub fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let d = pairwise_distances(x, x);
    let mut v: Vec<f64> = (0..x.nrows())
        .flat_map(|i| ((i + 1)..x.nrows()).map(move |j| (i, j)))
        .map(|(i, j)| d[(i, j)])
        .collect();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

pub fn initial_matrix(x: &DMatrix<f64>, init: &AInit) -> Result<DMatrix<f64>, TwoLayerError> {
    let d = x.ncols();
    match init {
        AInit::Identity => Ok(DMatrix::identity(d, d)),
        AInit::MedianHeuristic => {
            let m = median_pairwise_distance(x);
            let s = if m > 0.0 { 1.0 / m } else { 1.0 };
            Ok(DMatrix::identity(d, d) * s)
        }
        AInit::Given(rows) => {
            let a = crate::kernels::rows_to_matrix(rows)
                .filter(|a| a.nrows() == d && a.ncols() == d)
                .ok_or_else(|| TwoLayerError::InvalidConfig(format!("initial A must be {d}×{d}")))?;
            Ok(a)
        }
    }
}

/// Mini-batch gradient descent on the batch LOO loss. The base kernel shape is fixed to 1.
pub fn optimize_a(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &TwoLayerTrainConfig,
) -> Result<TrainedFirstLayer, TwoLayerError> {
    check_rows(x, y)?;
    let n = x.nrows();
    if config.batch_size < 2 || config.batch_size > n {
        return Err(TwoLayerError::InvalidConfig(format!(
            "batch size {} must lie in [2, {n}]",
            config.batch_size
        )));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(TwoLayerError::InvalidConfig(format!(
            "learning rate {} must be non-negative",
            config.learning_rate
        )));
    }
    let base = KernelSpec {
        family: config.family,
        shape: 1.0,
    };
    let mut a = initial_matrix(x, &config.a_init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_history = Vec::new();
    let mut skipped_steps = Vec::new();
    let mut step = 0usize;
    for _ in 0..config.n_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let xb = DMatrix::from_fn(batch.len(), x.ncols(), |i, j| x[(batch[i], j)]);
            let yb = DMatrix::from_fn(batch.len(), y.ncols(), |i, j| y[(batch[i], j)]);
            match loo_loss_and_gradient(&xb, &yb, &base, &a, config.lambda) {
                Ok((loss, grad)) => {
                    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                        return Err(TwoLayerError::NonFinite { step });
                    }
                    if config.learning_rate > 0.0 {
                        a -= grad * config.learning_rate;
                    }
                    loss_history.push(loss);
                }
                Err(TwoLayerError::Singular { .. }) => skipped_steps.push(step),
                Err(e) => return Err(e),
            }
            step += 1;
        }
    }
    Ok(TrainedFirstLayer {
        a,
        loss_history,
        skipped_steps,
    })
}

/// Singular values of `A` in decreasing order with matching right singular vectors (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    pub values: Vec<f64>,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl SingularSpectrum {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.values));
        &self.left * s * self.right.transpose()
    }
}

pub fn singular_spectrum(a: &DMatrix<f64>) -> SingularSpectrum {
    let svd = SVD::new(a.clone(), true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let values = order.iter().map(|&i| sv[i]).collect();
    let left = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let right = DMatrix::from_fn(v_t.ncols(), order.len(), |r, c| v_t[(order[c], r)]);
    SingularSpectrum {
        values,
        left,
        right,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for family in KernelFamily::ALL {
            let base = KernelSpec { family, shape: 1.0 };
            let x = random_matrix(&mut rng, 4, 3);
            let y = random_matrix(&mut rng, 4, 2);
            let a = random_matrix(&mut rng, 3, 3);
            let (_, grad) = loo_loss_and_gradient(&x, &y, &base, &a, 1e-3).unwrap();
            let step = 1e-6;
            let mut fd = DMatrix::zeros(3, 3);
            for i in 0..3 {
                for j in 0..3 {
                    let mut ap = a.clone();
                    ap[(i, j)] += step;
                    let mut am = a.clone();
                    am[(i, j)] -= step;
                    let lp = loo_loss_and_gradient(&x, &y, &base, &ap, 1e-3).unwrap().0;
                    let lm = loo_loss_and_gradient(&x, &y, &base, &am, 1e-3).unwrap().0;
                    fd[(i, j)] = (lp - lm) / (2.0 * step);
                }
            }
            let floor = 1e-3 * fd.amax();
            for (g, f) in grad.iter().zip(fd.iter()) {
                let rel = (g - f).abs() / g.abs().max(f.abs()).max(floor);
                assert!(rel < 1e-5, "{family:?}: {g} vs {f}");
            }
        }
    }

    #[test]
    fn anisotropic_target_stretches_relevant_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: DMatrix<f64> = DMatrix::from_fn(60, 6, |_, _| rng.gen_range(0.0..1.0));
        let y = DMatrix::from_fn(60, 1, |i, _| (5.0 * x[(i, 0)]).sin());
        let cfg = TwoLayerTrainConfig {
            family: KernelFamily::Gaussian,
            lambda: 1e-4,
            batch_size: 20,
            n_epochs: 100,
            learning_rate: 1e-2,
            rng_seed: 1,
            a_init: AInit::MedianHeuristic,
        };
        let a0 = initial_matrix(&x, &cfg.a_init).unwrap();
        let s0 = singular_spectrum(&a0).values;
        let trained = optimize_a(&x, &y, &cfg).unwrap();
        let s1 = singular_spectrum(&trained.a).values;
        assert!(s1[0] / s1[1] > s0[0] / s0[1], "{s1:?}");
        // the dominant right singular vector points along feature 1
        let v = singular_spectrum(&trained.a).right.column(0).clone_owned();
        assert!(v[0].abs() > 0.9, "{v}");
    }

    #[test]
    fn symmetric_batch_has_equal_loo_residuals() {
        let x = DMatrix::from_row_slice(2, 1, &[-0.5, 0.5]);
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let k: Kernel = KernelSpec::new(KernelFamily::Gaussian, 1.0).unwrap().into();
        let r = loo_residuals(&x, &y, &k, 1e-3).unwrap();
        assert!((r.residuals.row(0).norm() - r.residuals.row(1).norm()).abs() < 1e-14);
    }

    #[test]
    fn loo_matches_refit_on_five_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_matrix(&mut rng, 5, 3);
        let y = random_matrix(&mut rng, 5, 4);
        let k: Kernel = KernelSpec::new(KernelFamily::Matern2, 0.5).unwrap().into();
        let lambda = 1e-3;
        let r = loo_residuals(&x, &y, &k, lambda).unwrap();
        for i in 0..5 {
            let keep: Vec<usize> = (0..5).filter(|&j| j != i).collect();
            let xk = DMatrix::from_fn(4, 3, |a, b| x[(keep[a], b)]);
            let yk = DMatrix::from_fn(4, 4, |a, b| y[(keep[a], b)]);
            let m = crate::vkoga::fit_full(&xk, &yk, &k, lambda).unwrap();
            let row: Vec<f64> = x.row(i).iter().cloned().collect();
            let pred = m.predict(&row).unwrap();
            let expect = y.row(i).transpose() - pred;
            let got = r.residuals.row(i).transpose();
            assert!((&got - &expect).norm() <= 1e-10 * expect.norm());
        }
    }

    #[test]
    fn huge_ridge_returns_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 6, 2);
        let y = random_matrix(&mut rng, 6, 3);
        let k: Kernel = KernelSpec::new(KernelFamily::Matern1, 1.0).unwrap().into();
        let r = loo_residuals(&x, &y, &k, 1e8).unwrap();
        for i in 0..6 {
            let d = (r.residuals.row(i) - y.row(i)).norm();
            assert!(d <= 0.01 * y.row(i).norm());
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initial_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 20, 3);
        let y = random_matrix(&mut rng, 20, 2);
        let cfg = TwoLayerTrainConfig {
            learning_rate: 0.0,
            n_epochs: 3,
            batch_size: 8,
            ..Default::default()
        };
        let out = optimize_a(&x, &y, &cfg).unwrap();
        assert_eq!(out.a, initial_matrix(&x, &AInit::MedianHeuristic).unwrap());
        assert_eq!(out.loss_history.len(), 9);
    }

    #[test]
    fn optimization_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_matrix(&mut rng, 20, 3);
        let y = random_matrix(&mut rng, 20, 2);
        let cfg = TwoLayerTrainConfig {
            n_epochs: 5,
            batch_size: 8,
            ..Default::default()
        };
        assert_eq!(optimize_a(&x, &y, &cfg).unwrap(), optimize_a(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let x = DMatrix::zeros(4, 2);
        let y = DMatrix::zeros(4, 1);
        let cfg = TwoLayerTrainConfig {
            batch_size: 5,
            ..Default::default()
        };
        assert!(matches!(optimize_a(&x, &y, &cfg), Err(TwoLayerError::InvalidConfig(_))));
    }

    #[test]
    fn duplicate_points_without_ridge_are_singular() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let k: Kernel = KernelSpec::new(KernelFamily::Gaussian, 1.0).unwrap().into();
        assert!(matches!(
            loo_residuals(&x, &y, &k, 0.0),
            Err(TwoLayerError::Singular { .. })
        ));
    }

    #[test]
    fn spectrum_of_simple_matrices() {
        let s = singular_spectrum(&DMatrix::identity(4, 4));
        assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0, 3.0, 0.0]));
        let s = singular_spectrum(&d);
        let expect = [3.0, 1.0, 0.0, 0.0];
        for (v, e) in s.values.iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 6, 6);
        let s = singular_spectrum(&a);
        assert!((s.reconstruct() - &a).amax() < 1e-12);
        assert!(s.values.windows(2).all(|w| w[0] >= w[1]));
    }
}

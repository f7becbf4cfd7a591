//! Train/test splits, LOOCV grid search over kernel hyperparameters and the
//! relative test error.

use std::cmp::Ordering;
use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{Kernel, KernelError, KernelFamily, KernelSpec, TwoLayerKernelSpec};
use crate::twolayer::{optimize_a, TrainedFirstLayer, TwoLayerError, TwoLayerTrainConfig};
use crate::vkoga::{fit_greedy, greedy_on_gram, FitError, GreedyFit};

/// Expansion size of every greedy model.
pub const DEFAULT_GREEDY_SIZE: usize = 10;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {id}: curve length {got} differs from {expected}")]
    CurveLength { id: String, expected: usize, got: usize },
    #[error("sample {id}: feature length {got} differs from {expected}")]
    FeatureLength { id: String, expected: usize, got: usize },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("train count {train} must be below the sample count {total}")]
    BadTrainCount { train: usize, total: usize },
    #[error("LOOCV needs at least 3 training samples, got {0}")]
    TooFewSamples(usize),
    #[error("target row {row} has zero norm")]
    ZeroTarget { row: usize },
    #[error("prediction shape {got:?} differs from target shape {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("every grid cell failed")]
    AllCellsFailed,
    #[error("the hyperparameter grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    TwoLayer(#[from] TwoLayerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mf,
    Pca,
}

impl FeatureKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mf => "mf",
            Self::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub curve: Vec<f64>,
}

/// Samples with equal-length features and curves and unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    n_t: usize,
    n_f: usize,
    kind: FeatureKind,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, kind: FeatureKind) -> Result<Self, SelectError> {
        let first = samples.first().ok_or(SelectError::EmptyDataset)?;
        let (n_t, n_f) = (first.curve.len(), first.features.len());
        let mut seen = HashSet::new();
        for s in &samples {
            if s.curve.len() != n_t {
                return Err(SelectError::CurveLength {
                    id: s.id.clone(),
                    expected: n_t,
                    got: s.curve.len(),
                });
            }
            if s.features.len() != n_f {
                return Err(SelectError::FeatureLength {
                    id: s.id.clone(),
                    expected: n_f,
                    got: s.features.len(),
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(SelectError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self {
            samples,
            n_t,
            n_f,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn features(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.n_f, |i, j| self.samples[idx[i]].features[j])
    }

    pub fn curves(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.n_t, |i, j| self.samples[idx[i]].curve[j])
    }

    pub fn train_data(&self, set: &TrainSet) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.features(&set.0), self.curves(&set.0))
    }

    pub fn test_data(&self, set: &TestSet) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.features(&set.0), self.curves(&set.0))
    }
}

/// Dataset indices used for fitting and LOOCV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSet(pub Vec<usize>);

/// Dataset indices used only for the final error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSet(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: TrainSet,
    pub test: TestSet,
}

impl Split {
    pub fn is_disjoint(&self) -> bool {
        let train: HashSet<_> = self.train.0.iter().collect();
        self.test.0.iter().all(|i| !train.contains(i))
    }
}

/// Seeded uniform shuffle of `0..n`; the first `train_count` indices train.
pub fn split(n: usize, train_count: usize, seed: u64) -> Result<Split, SelectError> {
    if train_count == 0 || train_count >= n {
        return Err(SelectError::BadTrainCount {
            train: train_count,
            total: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(train_count);
    Ok(Split {
        seed,
        train: TrainSet(order),
        test: TestSet(test),
    })
}

/// `(1/N) · sqrt(Σ ‖aᵢ − sᵢ‖² / ‖aᵢ‖²)` over the rows of `targets` and `predictions`.
pub fn relative_test_error(
    targets: &DMatrix<f64>,
    predictions: &DMatrix<f64>,
) -> Result<f64, SelectError> {
    if targets.shape() != predictions.shape() {
        return Err(SelectError::ShapeMismatch {
            expected: targets.shape(),
            got: predictions.shape(),
        });
    }
    let n = targets.nrows();
    if n == 0 {
        return Err(SelectError::EmptyDataset);
    }
    let mut sum = 0.0;
    for i in 0..n {
        let a = targets.row(i).norm_squared();
        if a == 0.0 {
            return Err(SelectError::ZeroTarget { row: i });
        }
        sum += (targets.row(i) - predictions.row(i)).norm_squared() / a;
    }
    Ok(sum.sqrt() / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub families: Vec<KernelFamily>,
    pub shapes: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            families: KernelFamily::ALL.to_vec(),
            shapes: vec![1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125],
            lambdas: vec![0.0, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub family: KernelFamily,
    pub shape: f64,
    pub lambda: f64,
}

impl HyperGrid {
    /// Cells in listing order: family, then shape, then λ.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &family in &self.families {
            for &shape in &self.shapes {
                for &lambda in &self.lambdas {
                    out.push(GridCell {
                        family,
                        shape,
                        lambda,
                    });
                }
            }
        }
        out
    }

    fn family_rank(&self, f: KernelFamily) -> usize {
        self.families.iter().position(|&g| g == f).unwrap_or(usize::MAX)
    }
}

/// One row of the exported CV table; failed cells score `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub cell: GridCell,
    pub cv_score: f64,
}

pub fn cv_table_csv(rows: &[CvRow]) -> String {
    let mut s = String::from("family,shape,lambda,cv_score\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            r.cell.family.name(),
            r.cell.shape,
            r.cell.lambda,
            r.cv_score
        ));
    }
    s
}

/// Orders candidates by score, then family listing order, larger λ, smaller shape, cell index.
fn compare_cells(grid: &HyperGrid, a: (usize, &CvRow), b: (usize, &CvRow)) -> Ordering {
    let (ia, ra) = a;
    let (ib, rb) = b;
    ra.cv_score
        .total_cmp(&rb.cv_score)
        .then(grid.family_rank(ra.cell.family).cmp(&grid.family_rank(rb.cell.family)))
        .then(rb.cell.lambda.total_cmp(&ra.cell.lambda))
        .then(ra.cell.shape.total_cmp(&rb.cell.shape))
        .then(ia.cmp(&ib))
}

fn best_row(grid: &HyperGrid, table: &[CvRow]) -> Result<usize, SelectError> {
    let best = table
        .iter()
        .enumerate()
        .filter(|(_, r)| r.cv_score.is_finite())
        .min_by(|a, b| compare_cells(grid, (a.0, a.1), (b.0, b.1)))
        .map(|(i, _)| i);
    best.ok_or(SelectError::AllCellsFailed)
}

/// LOOCV score of greedy models on a precomputed kernel matrix: each training
/// point is predicted by a model fitted on the others.
pub fn loocv_score(
    gram: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    n_greedy: usize,
) -> Result<f64, SelectError> {
    let n = gram.nrows();
    let mut pred = DMatrix::zeros(n, y.ncols());
    for i in 0..n {
        let pool: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let sel = greedy_on_gram(gram, y, &pool, lambda, n_greedy.min(pool.len()))?;
        for (c, &j) in sel.centers.iter().enumerate() {
            let k = gram[(i, j)];
            for t in 0..y.ncols() {
                pred[(i, t)] += k * sel.coefficients[(c, t)];
            }
        }
    }
    relative_test_error(y, &pred)
}

fn score_or_inf(r: Result<f64, SelectError>) -> Result<f64, SelectError> {
    match r {
        Ok(s) if s.is_finite() => Ok(s),
        Ok(_) | Err(SelectError::Fit(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection1L {
    pub best: GridCell,
    pub cv_score: f64,
    pub table: Vec<CvRow>,
}

pub fn loocv_select_1l(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid: &HyperGrid,
    n_greedy: usize,
) -> Result<Selection1L, SelectError> {
    if x.nrows() < 3 {
        return Err(SelectError::TooFewSamples(x.nrows()));
    }
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(SelectError::EmptyGrid);
    }
    let table: Vec<CvRow> = cells
        .par_iter()
        .map(|&cell| {
            let kernel: Kernel = KernelSpec::new(cell.family, cell.shape)?.into();
            let gram = kernel.gram(x, x)?;
            let cv_score = score_or_inf(loocv_score(&gram, y, cell.lambda, n_greedy))?;
            Ok(CvRow { cell, cv_score })
        })
        .collect::<Result<_, SelectError>>()?;
    let i = best_row(grid, &table)?;
    Ok(Selection1L {
        best: table[i].cell,
        cv_score: table[i].cv_score,
        table,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection2L {
    pub family: KernelFamily,
    pub lambda: f64,
    pub first_layer: TrainedFirstLayer,
    pub cv_score: f64,
    /// Shape column is fixed at 1.
    pub table: Vec<CvRow>,
}

impl Selection2L {
    pub fn kernel(&self) -> TwoLayerKernelSpec {
        self.first_layer.kernel(self.family)
    }
}

/// LOOCV over `(family, λ)`. For each candidate `A` is optimized once on the
/// whole training set and then held fixed across the folds.
pub fn loocv_select_2l(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    families: &[KernelFamily],
    lambdas: &[f64],
    config: &TwoLayerTrainConfig,
    n_greedy: usize,
) -> Result<Selection2L, SelectError> {
    if x.nrows() < 3 {
        return Err(SelectError::TooFewSamples(x.nrows()));
    }
    let grid = HyperGrid {
        families: families.to_vec(),
        shapes: vec![1.0],
        lambdas: lambdas.to_vec(),
    };
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(SelectError::EmptyGrid);
    }
    let results: Vec<(CvRow, Option<TrainedFirstLayer>)> = cells
        .par_iter()
        .map(|&cell| {
            let cfg = TwoLayerTrainConfig {
                family: cell.family,
                lambda: cell.lambda,
                batch_size: config.batch_size.min(x.nrows()),
                ..config.clone()
            };
            let trained = match optimize_a(x, y, &cfg) {
                Ok(t) => t,
                Err(TwoLayerError::NonFinite { .. }) | Err(TwoLayerError::Singular { .. }) => {
                    return Ok((
                        CvRow {
                            cell,
                            cv_score: f64::INFINITY,
                        },
                        None,
                    ))
                }
                Err(e) => return Err(e.into()),
            };
            let kernel: Kernel = trained.kernel(cell.family).into();
            let gram = kernel.gram(x, x)?;
            let cv_score = score_or_inf(loocv_score(&gram, y, cell.lambda, n_greedy))?;
            Ok((CvRow { cell, cv_score }, Some(trained)))
        })
        .collect::<Result<_, SelectError>>()?;
    let table: Vec<CvRow> = results.iter().map(|(r, _)| *r).collect();
    let i = best_row(&grid, &table)?;
    let (row, trained) = results.into_iter().nth(i).expect("index in range");
    Ok(Selection2L {
        family: row.cell.family,
        lambda: row.cell.lambda,
        first_layer: trained.expect("finite score implies a trained layer"),
        cv_score: row.cv_score,
        table,
    })
}

/// Final greedy model for a selected cell.
pub fn fit_selected(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    kernel: &Kernel,
    lambda: f64,
    n_greedy: usize,
) -> Result<GreedyFit, SelectError> {
    Ok(fit_greedy(x, y, kernel, lambda, n_greedy.min(x.nrows()))?)
}

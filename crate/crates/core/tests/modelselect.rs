use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use poresurr::kernels::{Kernel, KernelFamily, KernelSpec};
use poresurr::modelselect::{
    fit_selected, loocv_select_1l, loocv_select_2l, relative_test_error, split, Dataset, FeatureKind,
    HyperGrid, Sample,
};
use poresurr::twolayer::TwoLayerTrainConfig;

/// Curves depending on the first of six features only.
fn anisotropic(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let features: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            let curve = (0..8).map(|t| 2.0 + (5.0 * features[0] + 0.3 * t as f64).sin()).collect();
            Sample {
                id: format!("a{i:03}"),
                features,
                curve,
            }
        })
        .collect();
    Dataset::new(samples, FeatureKind::Mf).unwrap()
}

#[test]
fn split_sets_are_disjoint_and_cover_the_data() {
    for seed in 0..5 {
        let sp = split(59, 47, seed).unwrap();
        assert!(sp.is_disjoint());
        let mut all: Vec<usize> = sp.train.0.iter().chain(&sp.test.0).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..59).collect::<Vec<_>>());
        assert_eq!(split(59, 47, seed).unwrap(), sp);
    }
    assert_ne!(split(59, 47, 0).unwrap().test, split(59, 47, 1).unwrap().test);
}

#[test]
fn two_layer_wins_on_anisotropic_data() {
    let ds = anisotropic(60, 11);
    let sp = split(ds.len(), 45, 3).unwrap();
    let (xtr, ytr) = ds.train_data(&sp.train);
    let (xte, yte) = ds.test_data(&sp.test);
    let grid = HyperGrid::default();
    let n = 10;

    let sel1 = loocv_select_1l(&xtr, &ytr, &grid, n).unwrap();
    let mut best_1l = f64::INFINITY;
    for cell in grid.cells() {
        let k: Kernel = KernelSpec::new(cell.family, cell.shape).unwrap().into();
        if let Ok(fit) = fit_selected(&xtr, &ytr, &k, cell.lambda, n) {
            if let Ok(e) = relative_test_error(&yte, &fit.model.predict_batch(&xte).unwrap()) {
                best_1l = best_1l.min(e);
            }
        }
    }
    let b = &sel1.best;
    let chosen: Kernel = KernelSpec::new(b.family, b.shape).unwrap().into();
    let e_sel = relative_test_error(
        &yte,
        &fit_selected(&xtr, &ytr, &chosen, b.lambda, n).unwrap().model.predict_batch(&xte).unwrap(),
    )
    .unwrap();
    assert!(best_1l <= e_sel);

    let cfg = TwoLayerTrainConfig {
        n_epochs: 200,
        ..Default::default()
    };
    let sel2 = loocv_select_2l(&xtr, &ytr, &KernelFamily::ALL, &grid.lambdas, &cfg, n).unwrap();
    let k2: Kernel = sel2.kernel().into();
    let fit2 = fit_selected(&xtr, &ytr, &k2, sel2.lambda, n).unwrap();
    let e2 = relative_test_error(&yte, &fit2.model.predict_batch(&xte).unwrap()).unwrap();
    assert!(e2 <= best_1l, "two-layer {e2:.3e} vs best one-layer {best_1l:.3e}");
}

#[test]
fn selection_is_deterministic() {
    let ds = anisotropic(24, 5);
    let sp = split(ds.len(), 18, 0).unwrap();
    let (x, y) = ds.train_data(&sp.train);
    let grid = HyperGrid::default();
    let a = loocv_select_1l(&x, &y, &grid, 6).unwrap();
    let b = loocv_select_1l(&x, &y, &grid, 6).unwrap();
    assert_eq!(a.best, b.best);
    assert_eq!(a.table, b.table);
}

#[test]
fn replicated_data_selects_identically() {
    let ds = anisotropic(20, 8);
    let all: Vec<usize> = (0..ds.len()).collect();
    let x = ds.features(&all);
    let y = ds.curves(&all);
    let x2 = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]);
    let grid = HyperGrid::default();
    assert_eq!(
        loocv_select_1l(&x, &y, &grid, 5).unwrap().best,
        loocv_select_1l(&x2, &y, &grid, 5).unwrap().best
    );
}

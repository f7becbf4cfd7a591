use nalgebra::{DMatrix, SVD};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use poresurr::pca::{fit_pca_dense, fit_pca_geometries, geometry_matrix, PcaBasis, PcaError, PcaOptions};
use poresurr::voxelgeom::{Phase, VoxelGeometry};

fn random_matrix(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_geometries(seed: u64, n: usize, count: usize) -> Vec<VoxelGeometry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            VoxelGeometry::from_fn(n, |_, _, _| match rng.gen_range(0..3) {
                0 => Phase::Free,
                1 => Phase::Washcoat,
                _ => Phase::Solid,
            })
        })
        .collect()
}

#[test]
fn training_columns_project_to_scaled_right_vectors() {
    let z = random_matrix(1, 200, 10);
    let fit = fit_pca_dense(&z, 4, PcaOptions::default()).unwrap();
    for j in 0..10 {
        let col: Vec<f64> = z.column(j).iter().copied().collect();
        let p = fit.basis.project(&col).unwrap();
        for c in 0..4 {
            let want = fit.basis.singular_values[c] * fit.v[(j, c)];
            assert!((p[c] - want).abs() < 1e-9, "column {j}, component {c}");
        }
    }
}

#[test]
fn scores_match_dense_svd() {
    let z = random_matrix(2, 150, 8);
    let fit = fit_pca_dense(&z, 5, PcaOptions::default()).unwrap();
    let svd = SVD::new(z.clone(), true, true);
    let (su, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let scores = fit.basis.u.transpose() * &z;
    for (c, &o) in order.iter().take(5).enumerate() {
        // sign of the component is fixed by U, so align the oracle by U as well
        let sign = if su.column(o).dot(&fit.basis.u.column(c)) < 0.0 { -1.0 } else { 1.0 };
        for j in 0..8 {
            let want = sign * svd.singular_values[o] * vt[(o, j)];
            assert!((scores[(c, j)] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn centered_geometry_path_matches_dense_path() {
    let geoms = random_geometries(3, 4, 9);
    let refs: Vec<&VoxelGeometry> = geoms.iter().collect();
    let opts = PcaOptions { center: true };
    let a = fit_pca_geometries(&refs, 5, opts).unwrap().basis;
    let b = fit_pca_dense(&geometry_matrix(&refs), 5, opts).unwrap().basis;
    assert!((&a.u - &b.u).amax() < 1e-9);
    assert!((a.mean.as_ref().unwrap() - b.mean.as_ref().unwrap()).amax() < 1e-15);
    for g in &geoms {
        let dense: Vec<f64> = g.flatten().iter().map(|&v| f64::from(u8::from(v))).collect();
        let (p, q) = (a.project_geometry(g).unwrap(), a.project(&dense).unwrap());
        for (x, y) in p.iter().zip(&q) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn rank_deficiency_is_reported() {
    let base = random_matrix(4, 50, 3);
    let z = DMatrix::from_fn(50, 6, |i, j| base[(i, j % 3)]);
    match fit_pca_dense(&z, 4, PcaOptions::default()) {
        Err(PcaError::RankDeficient { requested: 4, rank: 3 }) => {}
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        fit_pca_dense(&z, 7, PcaOptions::default()),
        Err(PcaError::TooFewSamples { .. })
    ));
}

#[test]
fn pcab_decoding_errors_are_distinct() {
    let z = random_matrix(5, 20, 4);
    let mut basis = fit_pca_dense(&z, 2, PcaOptions { center: true }).unwrap().basis;
    basis.source_split = "seed-9".into();
    let bytes = basis.to_bytes();
    assert_eq!(PcaBasis::read_from(&bytes[..]).unwrap(), basis);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(PcaBasis::read_from(&bad[..]), Err(PcaError::BadMagic)));
    let mut bad = bytes.clone();
    bad[4] = 7;
    assert!(matches!(PcaBasis::read_from(&bad[..]), Err(PcaError::UnsupportedVersion(7))));
    assert!(matches!(
        PcaBasis::read_from(&bytes[..bytes.len() - 3]),
        Err(PcaError::Truncated)
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn basis_is_orthonormal_and_ordered(seed in any::<u64>(), rows in 20usize..80, cols in 2usize..8) {
        let z = random_matrix(seed, rows, cols);
        let nf = cols.min(3);
        let b = fit_pca_dense(&z, nf, PcaOptions::default()).unwrap().basis;
        let defect = (b.u.transpose() * &b.u - DMatrix::identity(nf, nf)).amax();
        prop_assert!(defect < 1e-10);
        prop_assert!(b.singular_values.iter().all(|&s| s >= 0.0));
        prop_assert!(b.singular_values.windows(2).all(|w| w[0] >= w[1]));
        for j in 0..nf {
            let col = b.u.column(j);
            let top = col.amax();
            let first = col.iter().find(|x| x.abs() >= top * (1.0 - 1e-9)).unwrap();
            prop_assert!(*first > 0.0);
        }
    }

    #[test]
    fn fitting_is_deterministic(seed in any::<u64>()) {
        let geoms = random_geometries(seed, 3, 6);
        let refs: Vec<&VoxelGeometry> = geoms.iter().collect();
        let a = fit_pca_geometries(&refs, 3, PcaOptions::default()).unwrap().basis;
        let b = fit_pca_geometries(&refs, 3, PcaOptions::default()).unwrap().basis;
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }
}

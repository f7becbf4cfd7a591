mod common;

use std::f64::consts::PI;

use proptest::prelude::*;

use common::brute_features;
use poresurr::morphology::{compute_features, euler_characteristic};
use poresurr::voxelgeom::{Phase, VoxelGeometry};

fn four(g: &VoxelGeometry) -> [f64; 4] {
    let f = compute_features(g);
    [f.free_volume, f.free_surface_area, f.mean_curvature_integral, f.total_curvature_integral]
}

fn assert_close(a: [f64; 4], b: [f64; 4]) {
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{a:?} vs {b:?}");
    }
}

fn from_bits(n: usize, bits: &[bool]) -> VoxelGeometry {
    VoxelGeometry::from_fn(n, |x, y, z| {
        if bits[x + n * (y + n * z)] {
            Phase::Free
        } else {
            Phase::Solid
        }
    })
}

#[test]
fn every_two_cubed_geometry_matches_brute_force() {
    for occ in 0u32..256 {
        let bits: Vec<bool> = (0..8).map(|i| (occ >> i) & 1 == 1).collect();
        let g = from_bits(2, &bits);
        assert_close(four(&g), brute_features(&g));
    }
}

#[test]
fn checkerboard_is_pinned() {
    let g = VoxelGeometry::from_fn(4, |x, y, z| if (x + y + z) % 2 == 0 { Phase::Free } else { Phase::Solid });
    let f = compute_features(&g);
    let h = 0.25;
    // 32 isolated cubes; only faces and edges inside the domain count
    assert_eq!(f.porosity, 0.5);
    assert_eq!(f.washcoat_fraction, 0.0);
    assert_close(four(&g), brute_features(&g));
    assert!((f.free_volume - 32.0 * h * h * h).abs() < 1e-15);
    assert!((f.free_surface_area - 144.0 * h * h).abs() < 1e-12);
    assert!((f.total_curvature_integral - 4.0 * PI * 32.0).abs() < 1e-12);
}

#[test]
fn solid_torus_has_zero_total_curvature() {
    let g = VoxelGeometry::from_fn(6, |x, y, z| {
        let ring = (1..5).contains(&x) && (1..5).contains(&y) && !((2..4).contains(&x) && (2..4).contains(&y));
        if ring && z == 2 {
            Phase::Free
        } else {
            Phase::Solid
        }
    });
    assert_eq!(euler_characteristic(&g), 0);
    assert!(compute_features(&g).total_curvature_integral.abs() < 1e-12);
    assert_close(four(&g), brute_features(&g));
}

#[test]
fn all_free_cube() {
    let f = compute_features(&VoxelGeometry::uniform(5, Phase::Free));
    assert_eq!(f.porosity, 1.0);
    assert!((f.free_volume - 1.0).abs() < 1e-14);
    assert_eq!(f.free_surface_area, 0.0);
    assert_eq!(f.mean_curvature_integral, 0.0);
    assert!((f.total_curvature_integral - 4.0 * PI).abs() < 1e-12);
}

#[test]
fn single_voxel_feature_vector() {
    let n = 4;
    let h = 0.25;
    let g = VoxelGeometry::from_fn(n, |x, y, z| if (x, y, z) == (1, 2, 1) { Phase::Free } else { Phase::Solid });
    let f = compute_features(&g);
    assert_eq!(f.porosity, 1.0 / 64.0);
    assert_eq!(f.washcoat_fraction, 0.0);
    assert_close(four(&g), [h * h * h, 6.0 * h * h, 3.0 * PI * h, 4.0 * PI]);
}

fn interior_bits(n: usize) -> impl Strategy<Value = Vec<bool>> {
    // structures inside the inner (n−2)³ block so the boundary is never touched
    proptest::collection::vec(any::<bool>(), (n - 2).pow(3))
}

fn embed(n: usize, inner: &[bool], shift: usize) -> VoxelGeometry {
    let m = n - 2;
    VoxelGeometry::from_fn(n + 1, |x, y, z| {
        let (a, b, c) = (x as i64 - 1 - shift as i64, y as i64 - 1, z as i64 - 1);
        let inside = |v: i64| (0..m as i64).contains(&v);
        if inside(a) && inside(b) && inside(c) && inner[a as usize + m * (b as usize + m * c as usize)] {
            Phase::Free
        } else {
            Phase::Solid
        }
    })
}

proptest! {
    #[test]
    fn matches_brute_force_on_random_four_cubed(bits in proptest::collection::vec(any::<bool>(), 64)) {
        let g = from_bits(4, &bits);
        let (a, b) = (four(&g), brute_features(&g));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn translation_invariance(inner in interior_bits(5)) {
        let a = compute_features(&embed(5, &inner, 0));
        let b = compute_features(&embed(5, &inner, 1));
        prop_assert_eq!(a.to_array(), b.to_array());
    }

    #[test]
    fn interior_euler_characteristic_is_integral(inner in interior_bits(5)) {
        let ct = compute_features(&embed(5, &inner, 0)).total_curvature_integral / (4.0 * PI);
        prop_assert!((ct - ct.round()).abs() < 1e-12);
    }

    #[test]
    fn volume_and_surface_add_over_separated_components(
        left in proptest::collection::vec(any::<bool>(), 8),
        right in proptest::collection::vec(any::<bool>(), 8),
    ) {
        // two 2³ blocks, interior to a 7³ domain and two voxels apart
        let place = |bits: &[bool], ox: usize| VoxelGeometry::from_fn(7, move |x, y, z| {
            let (a, b, c) = (x as i64 - ox as i64, y as i64 - 1, z as i64 - 1);
            let ok = |v: i64| (0..2).contains(&v);
            if ok(a) && ok(b) && ok(c) && bits[(a + 2 * (b + 2 * c)) as usize] {
                Phase::Free
            } else {
                Phase::Solid
            }
        });
        let l = compute_features(&place(&left, 1));
        let r = compute_features(&place(&right, 4));
        let both_bits: Vec<bool> = (0..343).map(|i| {
            let (x, y, z) = (i % 7, (i / 7) % 7, i / 49);
            place(&left, 1).is_free(x, y, z) || place(&right, 4).is_free(x, y, z)
        }).collect();
        let both = compute_features(&from_bits(7, &both_bits));
        prop_assert!((both.free_volume - l.free_volume - r.free_volume).abs() < 1e-12);
        prop_assert!((both.free_surface_area - l.free_surface_area - r.free_surface_area).abs() < 1e-12);
    }
}

//! Morphological descriptors of the free-pore phase.
//!
//! Surface area, integral mean curvature and Euler characteristic are Minkowski
//! functionals of the free voxels, evaluated by counting 2×2×2 voxel
//! configurations around every lattice vertex and summing per-configuration
//! weights. The free phase is 6-connected (the complement is 26-connected).
//!
//! Domain boundary convention: faces and edges lying on the faces of the unit
//! cube contribute nothing to `S` and `c_f`; the Euler characteristic is that
//! of the free phase as a closed body, so a completely free cube has χ = 1.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::voxelgeom::VoxelGeometry;

/// The six descriptors `(ε, ε_w, V, S, c_f, ct_f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorphFeatures {
    pub porosity: f64,
    pub washcoat_fraction: f64,
    pub free_volume: f64,
    pub free_surface_area: f64,
    pub mean_curvature_integral: f64,
    pub total_curvature_integral: f64,
}

impl MorphFeatures {
    pub const NAMES: [&'static str; 6] = ["eps", "eps_w", "V", "S", "c_f", "ct_f"];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.porosity,
            self.washcoat_fraction,
            self.free_volume,
            self.free_surface_area,
            self.mean_curvature_integral,
            self.total_curvature_integral,
        ]
    }
}

pub fn porosity(g: &VoxelGeometry) -> f64 {
    g.free_count() as f64 / g.n_voxels() as f64
}

pub fn washcoat_fraction(g: &VoxelGeometry) -> f64 {
    g.washcoat_count() as f64 / g.n_voxels() as f64
}

pub fn free_volume(g: &VoxelGeometry) -> f64 {
    g.free_count() as f64 * g.h().powi(3)
}

/// Integer sums of the configuration weights over the whole lattice.
///
/// `faces4` is four times the number of interior free/non-free faces,
/// `edge_halves` is twice the edge-curvature sum in units of `πh/4` (each lattice
/// edge is seen from both end vertices),
/// `euler8` is eight times the Euler characteristic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfigurationSums {
    pub faces4: i64,
    pub edge_halves: i64,
    pub euler8: i64,
}

impl ConfigurationSums {
    pub fn surface_face_count(&self) -> f64 {
        self.faces4 as f64 / 4.0
    }

    /// Euler characteristic (always an integer).
    pub fn euler_characteristic(&self) -> i64 {
        debug_assert_eq!(self.euler8 % 8, 0);
        self.euler8 / 8
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LocalWeights {
    faces4: i64,
    edge_halves: i64,
    euler8: i64,
}

#[inline]
fn bit(a: usize, b: usize, c: usize) -> usize {
    a | (b << 1) | (c << 2)
}

/// Voxel index inside a 2×2×2 block with coordinate `s` on `axis` and `p`, `q`
/// on the two remaining axes (in increasing axis order).
#[inline]
fn block_bit(axis: usize, s: usize, p: usize, q: usize) -> usize {
    match axis {
        0 => bit(s, p, q),
        1 => bit(p, s, q),
        _ => bit(p, q, s),
    }
}

/// Weight in units of `πh/4` of a lattice edge surrounded by four voxels
/// `[(0,0), (1,0), (0,1), (1,1)]` in the plane normal to the edge.
fn edge_weight(around: [bool; 4]) -> i64 {
    let k = around.iter().filter(|&&b| b).count();
    match k {
        1 => 1,
        2 if around[0] == around[3] => 2, // diagonal pair: two convex edges
        3 => -1,
        _ => 0,
    }
}

fn local_weights(occ: u8, inside: u8) -> LocalWeights {
    let on = |i: usize| (occ >> i) & 1 == 1;
    let ins = |i: usize| (inside >> i) & 1 == 1;
    let mut w = LocalWeights::default();

    let mut pairs = 0i64;
    for axis in 0..3 {
        for p in 0..2 {
            for q in 0..2 {
                let i = block_bit(axis, 0, p, q);
                let j = block_bit(axis, 1, p, q);
                if ins(i) && ins(j) && on(i) != on(j) {
                    w.faces4 += 1;
                }
                if on(i) && on(j) {
                    pairs += 1;
                }
            }
        }
    }

    let mut squares = 0i64;
    for axis in 0..3 {
        for s in 0..2 {
            let idx = [
                block_bit(axis, s, 0, 0),
                block_bit(axis, s, 1, 0),
                block_bit(axis, s, 0, 1),
                block_bit(axis, s, 1, 1),
            ];
            let around = idx.map(on);
            if idx.iter().all(|&i| ins(i)) {
                w.edge_halves += edge_weight(around);
            }
            if around.iter().all(|&b| b) {
                squares += 1;
            }
        }
    }

    let n = occ.count_ones() as i64;
    let full = i64::from(occ == 0xff);
    w.euler8 = n - 2 * pairs + 4 * squares - 8 * full;
    w
}

fn inside_mask(code: usize) -> u8 {
    // per-axis status: 0 = vertex on lower face, 1 = interior, 2 = upper face
    let st = [code % 3, (code / 3) % 3, code / 9];
    let mut m = 0u8;
    for c in 0..2 {
        for b in 0..2 {
            for a in 0..2 {
                let ok = [a, b, c]
                    .iter()
                    .zip(st)
                    .all(|(&s, status)| match status {
                        0 => s == 1,
                        2 => s == 0,
                        _ => true,
                    });
                if ok {
                    m |= 1 << bit(a, b, c);
                }
            }
        }
    }
    m
}

fn weight_table() -> &'static [[LocalWeights; 256]; 27] {
    static TABLE: OnceLock<Box<[[LocalWeights; 256]; 27]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Box::new([[LocalWeights::default(); 256]; 27]);
        for (code, row) in t.iter_mut().enumerate() {
            let inside = inside_mask(code);
            for (occ, w) in row.iter_mut().enumerate() {
                // voxels outside the domain are never free
                if occ as u8 & !inside == 0 {
                    *w = local_weights(occ as u8, inside);
                }
            }
        }
        t
    })
}

/// Histogram of `(boundary pattern, occupancy)` over all `(n_h+1)³` vertices.
pub fn configuration_histogram(g: &VoxelGeometry) -> Vec<[u64; 256]> {
    let n = g.n_h();
    let free = g.free_mask();
    let mut hist = vec![[0u64; 256]; 27];
    let status = |v: usize| {
        if v == 0 {
            0
        } else if v == n {
            2
        } else {
            1
        }
    };
    for vz in 0..=n {
        for vy in 0..=n {
            for vx in 0..=n {
                let mut occ = 0u8;
                for c in 0..2 {
                    let z = vz + c;
                    if z == 0 || z > n {
                        continue;
                    }
                    for b in 0..2 {
                        let y = vy + b;
                        if y == 0 || y > n {
                            continue;
                        }
                        for a in 0..2 {
                            let x = vx + a;
                            if x == 0 || x > n {
                                continue;
                            }
                            if free.get((x - 1) + n * ((y - 1) + n * (z - 1))) {
                                occ |= 1 << bit(a, b, c);
                            }
                        }
                    }
                }
                let code = status(vx) + 3 * status(vy) + 9 * status(vz);
                hist[code][occ as usize] += 1;
            }
        }
    }
    hist
}

pub fn configuration_sums(g: &VoxelGeometry) -> ConfigurationSums {
    let table = weight_table();
    let hist = configuration_histogram(g);
    let mut s = ConfigurationSums::default();
    for (code, row) in hist.iter().enumerate() {
        for (occ, &count) in row.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let w = table[code][occ];
            let c = count as i64;
            s.faces4 += c * w.faces4;
            s.edge_halves += c * w.edge_halves;
            s.euler8 += c * w.euler8;
        }
    }
    s
}

/// Interior free/non-free interface area.
pub fn surface_area(g: &VoxelGeometry) -> f64 {
    configuration_sums(g).surface_face_count() * g.h().powi(2)
}

/// `(c_f, ct_f)`: integral mean curvature and `4π χ`.
pub fn curvature_integrals(g: &VoxelGeometry) -> (f64, f64) {
    let s = configuration_sums(g);
    curvatures_from_sums(&s, g.h())
}

fn curvatures_from_sums(s: &ConfigurationSums, h: f64) -> (f64, f64) {
    let c_f = PI * h / 8.0 * s.edge_halves as f64;
    let ct_f = 4.0 * PI * s.euler_characteristic() as f64;
    (c_f, ct_f)
}

/// Euler characteristic of the free phase under 6-connectivity.
pub fn euler_characteristic(g: &VoxelGeometry) -> i64 {
    configuration_sums(g).euler_characteristic()
}

/// The feature map `Φ_MF`.
pub fn compute_features(g: &VoxelGeometry) -> MorphFeatures {
    let s = configuration_sums(g);
    let h = g.h();
    let (c_f, ct_f) = curvatures_from_sums(&s, h);
    MorphFeatures {
        porosity: porosity(g),
        washcoat_fraction: washcoat_fraction(g),
        free_volume: free_volume(g),
        free_surface_area: s.surface_face_count() * h * h,
        mean_curvature_integral: c_f,
        total_curvature_integral: ct_f,
    }
}

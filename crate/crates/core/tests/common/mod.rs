//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use poresurr::voxelgeom::VoxelGeometry;

/// `(V, S, c_f, ct_f)` of the free phase of `g` by brute-force counting.
pub fn brute_features(g: &VoxelGeometry) -> [f64; 4] {
    brute_minkowski(g.n_h(), &|x, y, z| g.is_free(x as usize, y as usize, z as usize))
}

/// Free-phase functionals by direct counting over faces, edges and cells.
pub fn brute_minkowski(n: usize, free: &dyn Fn(i64, i64, i64) -> bool) -> [f64; 4] {
    let h = 1.0 / n as f64;
    let ni = n as i64;
    let inside = |v: i64| (0..ni).contains(&v);
    let at = |p: [i64; 3]| p.iter().all(|&v| inside(v)) && free(p[0], p[1], p[2]);
    let unit = |axis: usize| {
        let mut e = [0i64; 3];
        e[axis] = 1;
        e
    };
    let add = |p: [i64; 3], q: [i64; 3]| [p[0] + q[0], p[1] + q[1], p[2] + q[2]];

    let mut cells = 0i64;
    let mut faces = 0i64;
    let mut pairs = 0i64;
    let mut squares = 0i64;
    let mut cubes = 0i64;
    let mut turning = 0.0;
    for z in -1..=ni {
        for y in -1..=ni {
            for x in -1..=ni {
                let p = [x, y, z];
                if at(p) {
                    cells += 1;
                }
                for axis in 0..3 {
                    let q = add(p, unit(axis));
                    let both_inside = p.iter().chain(&q).all(|&v| inside(v));
                    if both_inside && at(p) != at(q) {
                        faces += 1;
                    }
                    if at(p) && at(q) {
                        pairs += 1;
                    }
                }
                // squares in the three planes with lower corner p
                for (u, w) in [(0, 1), (1, 2), (0, 2)] {
                    let quad = [p, add(p, unit(u)), add(p, unit(w)), add(add(p, unit(u)), unit(w))];
                    if quad.iter().all(|&c| at(c)) {
                        squares += 1;
                    }
                }
                let mut cube = true;
                for c in 0..8 {
                    let q = [x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1)];
                    cube &= at(q);
                }
                if cube {
                    cubes += 1;
                }
            }
        }
    }

    // lattice edges: the edge along `axis` at lattice point (.., a, b) is
    // shared by four cells; interior edges only
    for axis in 0..3 {
        let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
        for t in 0..ni {
            for a in 1..ni {
                for b in 1..ni {
                    let cell = |du: i64, dw: i64| {
                        let mut p = [0i64; 3];
                        p[axis] = t;
                        p[u] = a - 1 + du;
                        p[w] = b - 1 + dw;
                        at(p)
                    };
                    // cyclic order around the edge
                    let ring = [cell(0, 0), cell(1, 0), cell(1, 1), cell(0, 1)];
                    let k = ring.iter().filter(|&&v| v).count();
                    if k == 0 || k == 4 {
                        continue;
                    }
                    let start = (0..4).find(|&i| !ring[i]).unwrap();
                    let mut run = 0;
                    for s in 1..=4 {
                        let v = ring[(start + s) % 4];
                        if v {
                            run += 1;
                        } else if run > 0 {
                            turning += PI - run as f64 * PI / 2.0;
                            run = 0;
                        }
                    }
                    if run > 0 {
                        turning += PI - run as f64 * PI / 2.0;
                    }
                }
            }
        }
    }
    let chi = cells - pairs + squares - cubes;
    [
        cells as f64 * h.powi(3),
        faces as f64 * h * h,
        0.5 * h * turning,
        4.0 * PI * chi as f64,
    ]
}

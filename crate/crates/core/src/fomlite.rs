//! Desk-scale full-order model: potential flow through the free pores and an
//! explicit finite-volume solve of the dimensionless convection–diffusion–
//! reaction equation, reduced to outlet breakthrough curves.
//!
//! Flow is along +x. Inlet is the face x = 0, outlet the face x = 1.

use std::collections::VecDeque;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::voxelgeom::{generate_sample, GenerateError, GeometryConfig, Phase, VoxelGeometry};

/// Relative CG residual target for the pressure solve.
pub const CG_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("no free-pore component connects the inlet to the outlet")]
    Disconnected,
    #[error("conjugate gradient stalled at relative residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("inlet velocity must be positive and finite")]
    InvalidVelocity,
}

#[derive(Debug, Error)]
pub enum CdrError {
    #[error("invalid CDR parameters: {0}")]
    InvalidParams(String),
    #[error("flow field resolution {flow} differs from geometry resolution {geometry}")]
    ResolutionMismatch { flow: usize, geometry: usize },
    #[error("non-finite concentration at step {step}")]
    NonFinite { step: usize },
}

/// Face-normal velocities on the staggered grid.
///
/// `vx` has `(n+1)·n·n` entries with face `(i, j, k)` between voxels
/// `(i−1, j, k)` and `(i, j, k)`; `vy` and `vz` are laid out analogously.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    n_h: usize,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub vz: Vec<f64>,
    pub cg_iterations: usize,
}

impl FlowField {
    pub fn n_h(&self) -> usize {
        self.n_h
    }

    /// Zero flow, for pure diffusion runs.
    pub fn zero(n_h: usize) -> Self {
        let m = (n_h + 1) * n_h * n_h;
        Self {
            n_h,
            vx: vec![0.0; m],
            vy: vec![0.0; m],
            vz: vec![0.0; m],
            cg_iterations: 0,
        }
    }

    fn fx(&self, i: usize, j: usize, k: usize) -> usize {
        i + (self.n_h + 1) * (j + self.n_h * k)
    }

    fn fy(&self, i: usize, j: usize, k: usize) -> usize {
        j + (self.n_h + 1) * (i + self.n_h * k)
    }

    fn fz(&self, i: usize, j: usize, k: usize) -> usize {
        k + (self.n_h + 1) * (i + self.n_h * j)
    }

    /// x-velocity on the face at `i ∈ 0..=n` in front of voxel column `(j, k)`.
    pub fn vel_x(&self, i: usize, j: usize, k: usize) -> f64 {
        self.vx[self.fx(i, j, k)]
    }

    pub fn vel_y(&self, i: usize, j: usize, k: usize) -> f64 {
        self.vy[self.fy(i, j, k)]
    }

    pub fn vel_z(&self, i: usize, j: usize, k: usize) -> f64 {
        self.vz[self.fz(i, j, k)]
    }

    /// `∇·v` of voxel `(i, j, k)`: net outward face velocity divided by `h`.
    pub fn divergence(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.n_h as f64;
        (self.vel_x(i + 1, j, k) - self.vel_x(i, j, k) + self.vel_y(i, j + 1, k)
            - self.vel_y(i, j, k)
            + self.vel_z(i, j, k + 1)
            - self.vel_z(i, j, k))
            * n
    }

    /// Largest `|∇·v|` over all voxels.
    pub fn max_divergence(&self) -> f64 {
        let n = self.n_h;
        let mut m = 0.0f64;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    m = m.max(self.divergence(i, j, k).abs());
                }
            }
        }
        m
    }

    pub fn max_speed(&self) -> f64 {
        self.vx
            .iter()
            .chain(&self.vy)
            .chain(&self.vz)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Flux `Σ v·h²` through the inlet face.
    pub fn inlet_flux(&self) -> f64 {
        let h2 = (1.0 / self.n_h as f64).powi(2);
        let n = self.n_h;
        (0..n * n).map(|jk| self.vel_x(0, jk % n, jk / n)).sum::<f64>() * h2
    }
}

/// Labels of 6-connected free components; `usize::MAX` on non-free voxels.
fn free_components(g: &VoxelGeometry) -> (Vec<usize>, usize) {
    let nv = g.n_voxels();
    let mut label = vec![usize::MAX; nv];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for s in 0..nv {
        if label[s] != usize::MAX || g.phase_at(s) != Phase::Free {
            continue;
        }
        label[s] = count;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            for w in g.neighbors6(v) {
                if label[w] == usize::MAX && g.phase_at(w) == Phase::Free {
                    label[w] = count;
                    queue.push_back(w);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

/// Symmetric 7-point operator on the retained free voxels.
struct PressureSystem {
    diag: Vec<f64>,
    /// Neighbor unknowns, `usize::MAX` when absent.
    nb: Vec<[usize; 6]>,
}

impl PressureSystem {
    fn apply(&self, p: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(r, o)| {
            let mut s = self.diag[r] * p[r];
            for &c in &self.nb[r] {
                if c != usize::MAX {
                    s -= p[c];
                }
            }
            *o = s;
        });
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients.
fn conjugate_gradient(sys: &PressureSystem, b: &[f64]) -> Result<(Vec<f64>, usize), FlowError> {
    let m = b.len();
    let mut x = vec![0.0; m];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&sys.diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; m];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut rz = dot(&r, &z);
    let cap = 20 * m + 100;
    for it in 0..cap {
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= CG_TOLERANCE {
            return Ok((x, it));
        }
        sys.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(FlowError::NotConverged {
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..m {
            z[i] = r[i] / sys.diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = dot(&r, &r).sqrt() / bnorm;
    // a residual stuck at round-off level is accepted
    if rel <= 1e3 * CG_TOLERANCE {
        return Ok((x, cap));
    }
    Err(FlowError::NotConverged {
        iterations: cap,
        residual: rel,
    })
}

/// Potential flow `v = −∇p` through the free pores with `p = 1` on the inlet
/// and `p = 0` on the outlet, no flux through walls and the lateral faces.
/// Only components touching both the inlet and the outlet carry flow. Velocities
/// are scaled so the mean x-velocity over the free inlet faces equals `u_in`.
pub fn potential_flow(g: &VoxelGeometry, u_in: f64) -> Result<FlowField, FlowError> {
    if !(u_in > 0.0 && u_in.is_finite()) {
        return Err(FlowError::InvalidVelocity);
    }
    let n = g.n_h();
    let (label, ncomp) = free_components(g);
    let mut at_inlet = vec![false; ncomp];
    let mut at_outlet = vec![false; ncomp];
    for k in 0..n {
        for j in 0..n {
            let a = label[g.index(0, j, k)];
            if a != usize::MAX {
                at_inlet[a] = true;
            }
            let b = label[g.index(n - 1, j, k)];
            if b != usize::MAX {
                at_outlet[b] = true;
            }
        }
    }
    if !(0..ncomp).any(|c| at_inlet[c] && at_outlet[c]) {
        return Err(FlowError::Disconnected);
    }
    // unknowns: free voxels in a flowing component
    let mut unknown = vec![usize::MAX; g.n_voxels()];
    let mut cells = Vec::new();
    for (v, &l) in label.iter().enumerate() {
        if l != usize::MAX && at_inlet[l] && at_outlet[l] {
            unknown[v] = cells.len();
            cells.push(v);
        }
    }
    let mut diag = vec![0.0; cells.len()];
    let mut nb = vec![[usize::MAX; 6]; cells.len()];
    let mut b = vec![0.0; cells.len()];
    for (r, &v) in cells.iter().enumerate() {
        let (i, _, _) = g.coords(v);
        for (s, w) in g.neighbors6(v).enumerate() {
            if unknown[w] != usize::MAX {
                nb[r][s] = unknown[w];
                diag[r] += 1.0;
            }
        }
        // half-cell distance to the Dirichlet faces
        if i == 0 {
            diag[r] += 2.0;
            b[r] += 2.0;
        }
        if i == n - 1 {
            diag[r] += 2.0;
        }
    }
    let sys = PressureSystem { diag, nb };
    let (p, iterations) = conjugate_gradient(&sys, &b)?;

    let nf = n as f64;
    let mut flow = FlowField::zero(n);
    flow.cg_iterations = iterations;
    let pv = |v: usize| p[unknown[v]];
    for (r, &v) in cells.iter().enumerate() {
        let (i, j, k) = g.coords(v);
        if i == 0 {
            let f = flow.fx(0, j, k);
            flow.vx[f] = 2.0 * (1.0 - p[r]) * nf;
        }
        if i == n - 1 {
            let f = flow.fx(n, j, k);
            flow.vx[f] = 2.0 * p[r] * nf;
        }
        if i + 1 < n {
            let w = g.index(i + 1, j, k);
            if unknown[w] != usize::MAX {
                let f = flow.fx(i + 1, j, k);
                flow.vx[f] = (p[r] - pv(w)) * nf;
            }
        }
        if j + 1 < n {
            let w = g.index(i, j + 1, k);
            if unknown[w] != usize::MAX {
                let f = flow.fy(i, j + 1, k);
                flow.vy[f] = (p[r] - pv(w)) * nf;
            }
        }
        if k + 1 < n {
            let w = g.index(i, j, k + 1);
            if unknown[w] != usize::MAX {
                let f = flow.fz(i, j, k + 1);
                flow.vz[f] = (p[r] - pv(w)) * nf;
            }
        }
    }
    let inlet_faces = (0..n * n)
        .filter(|&jk| g.phase(0, jk % n, jk / n) == Phase::Free)
        .count();
    let mean: f64 = (0..n * n).map(|jk| flow.vel_x(0, jk % n, jk / n)).sum::<f64>() / inlet_faces as f64;
    let scale = u_in / mean;
    for v in flow.vx.iter_mut().chain(flow.vy.iter_mut()).chain(flow.vz.iter_mut()) {
        *v *= scale;
    }
    Ok(flow)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdrParams {
    pub pe: f64,
    pub da: f64,
    pub n_t: usize,
    pub t_end: f64,
    pub cfl: f64,
    /// Diffusivity inside the washcoat relative to the free pores.
    pub washcoat_diffusivity: f64,
}

impl Default for CdrParams {
    fn default() -> Self {
        Self {
            pe: 5.0,
            da: 0.1,
            n_t: 500,
            t_end: 1.0,
            cfl: 0.9,
            washcoat_diffusivity: 1.0,
        }
    }
}

impl CdrParams {
    pub fn validate(&self) -> Result<(), CdrError> {
        let bad = |m: &str| Err(CdrError::InvalidParams(m.into()));
        if !(self.pe >= 0.0 && self.pe.is_finite()) {
            return bad("Pe must be non-negative");
        }
        if !(self.da >= 0.0 && self.da.is_finite()) {
            return bad("Da must be non-negative");
        }
        if self.n_t < 2 {
            return bad("n_t must be at least 2");
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("T_end must be positive");
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("CFL factor must lie in (0, 1]");
        }
        if !(self.washcoat_diffusivity > 0.0 && self.washcoat_diffusivity.is_finite()) {
            return bad("washcoat diffusivity must be positive");
        }
        Ok(())
    }

    pub fn t_grid(&self) -> Vec<f64> {
        let dt = self.t_end / (self.n_t - 1) as f64;
        (0..self.n_t).map(|k| k as f64 * dt).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakthroughCurve {
    pub t_grid: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub n_steps: usize,
    pub dt: f64,
    pub min_c: f64,
    pub max_c: f64,
}

/// Explicit Euler stepper. One step is `c ← c + Δt (s − D c + W c)` with
/// `D` diagonal, `W ≥ 0` off-diagonal and `s ≥ 0` the inlet source.
pub struct CdrSolver {
    h: f64,
    /// active cell → voxel index
    cells: Vec<usize>,
    diag: Vec<f64>,
    source: Vec<f64>,
    row_start: Vec<usize>,
    col: Vec<usize>,
    weight: Vec<f64>,
    /// `(cell, h² · Pe · v)` for free outlet faces
    outlet: Vec<(usize, f64)>,
    /// `(cell, h² · 2 D / h, h² · Pe · v)` for free inlet faces
    inlet: Vec<(usize, f64, f64)>,
    /// free outlet cells (for the breakthrough integral)
    outlet_cells: Vec<usize>,
    c: Vec<f64>,
    scratch: Vec<f64>,
    max_rate: f64,
}

impl CdrSolver {
    pub fn new(g: &VoxelGeometry, flow: &FlowField, params: &CdrParams) -> Result<Self, CdrError> {
        params.validate()?;
        if flow.n_h() != g.n_h() {
            return Err(CdrError::ResolutionMismatch {
                flow: flow.n_h(),
                geometry: g.n_h(),
            });
        }
        let n = g.n_h();
        let h = g.h();
        let h2 = h * h;
        let dw = params.washcoat_diffusivity;
        let diff = |ph: Phase| if ph == Phase::Washcoat { dw } else { 1.0 };

        let mut id = vec![usize::MAX; g.n_voxels()];
        let mut cells = Vec::new();
        for v in 0..g.n_voxels() {
            if g.phase_at(v) != Phase::Solid {
                id[v] = cells.len();
                cells.push(v);
            }
        }
        let m = cells.len();
        let mut diag = vec![0.0; m];
        let mut source = vec![0.0; m];
        let mut row_start = Vec::with_capacity(m + 1);
        let mut col = Vec::new();
        let mut weight = Vec::new();
        let mut inlet = Vec::new();
        let mut outlet = Vec::new();
        let mut outlet_cells = Vec::new();

        for (r, &v) in cells.iter().enumerate() {
            row_start.push(col.len());
            let (i, j, k) = g.coords(v);
            let ph = g.phase_at(v);
            let free = ph == Phase::Free;
            // (neighbor voxel, outward face velocity) for the six faces
            let faces: [(Option<usize>, f64); 6] = [
                (i.checked_sub(1).map(|a| g.index(a, j, k)), -flow.vel_x(i, j, k)),
                ((i + 1 < n).then(|| g.index(i + 1, j, k)), flow.vel_x(i + 1, j, k)),
                (j.checked_sub(1).map(|a| g.index(i, a, k)), -flow.vel_y(i, j, k)),
                ((j + 1 < n).then(|| g.index(i, j + 1, k)), flow.vel_y(i, j + 1, k)),
                (k.checked_sub(1).map(|a| g.index(i, j, a)), -flow.vel_z(i, j, k)),
                ((k + 1 < n).then(|| g.index(i, j, k + 1)), flow.vel_z(i, j, k + 1)),
            ];
            for (w, vout) in faces {
                let Some(w) = w else { continue };
                let c = id[w];
                if c == usize::MAX {
                    continue;
                }
                let (da, db) = (diff(ph), diff(g.phase_at(w)));
                let dface = 2.0 * da * db / (da + db);
                let mut coupling = dface / h2;
                diag[r] += dface / h2;
                if free && g.phase_at(w) == Phase::Free {
                    let conv = params.pe * vout / h;
                    if conv > 0.0 {
                        diag[r] += conv;
                    } else {
                        coupling -= conv;
                    }
                }
                col.push(c);
                weight.push(coupling);
            }
            if free && i == 0 {
                let d = 2.0 / h2;
                let conv = params.pe * flow.vel_x(0, j, k) / h;
                diag[r] += d;
                source[r] += d + conv;
                inlet.push((r, d * h2 * h, conv * h2 * h));
            }
            if free && i == n - 1 {
                let conv = params.pe * flow.vel_x(n, j, k) / h;
                diag[r] += conv;
                outlet.push((r, conv * h2 * h));
                outlet_cells.push(r);
            }
            if ph == Phase::Washcoat {
                diag[r] += params.da;
            }
        }
        row_start.push(col.len());
        let max_rate = diag.iter().fold(0.0f64, |a, &b| a.max(b));
        Ok(Self {
            h,
            cells,
            diag,
            source,
            row_start,
            col,
            weight,
            outlet,
            inlet,
            outlet_cells,
            c: vec![0.0; m],
            scratch: vec![0.0; m],
            max_rate,
        })
    }

    /// Largest stable step: `CFL · min(h²/6, h/(Pe·v_max))` capped by the
    /// per-cell positivity bound `CFL / max_i D_ii`.
    pub fn max_dt(&self, params: &CdrParams, flow: &FlowField) -> f64 {
        let mut dt = self.h * self.h / 6.0;
        let vmax = flow.max_speed();
        if params.pe > 0.0 && vmax > 0.0 {
            dt = dt.min(self.h / (params.pe * vmax));
        }
        let mut dt = params.cfl * dt;
        if self.max_rate > 0.0 {
            dt = dt.min(params.cfl / self.max_rate);
        }
        dt
    }

    pub fn concentration(&self) -> &[f64] {
        &self.c
    }

    /// Voxel index of each active cell, aligned with [`Self::concentration`].
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn mass(&self) -> f64 {
        self.c.iter().sum::<f64>() * self.h.powi(3)
    }

    /// Species inflow rate through the inlet (diffusive plus convective).
    pub fn inflow_rate(&self) -> f64 {
        self.inlet
            .iter()
            .map(|&(r, d, conv)| d * (1.0 - self.c[r]) + conv)
            .sum()
    }

    pub fn outflow_rate(&self) -> f64 {
        self.outlet.iter().map(|&(r, conv)| conv * self.c[r]).sum()
    }

    /// Integral of `c` over the free outlet faces, `Σ c·h²`.
    pub fn outlet_integral(&self) -> f64 {
        self.outlet_cells.iter().map(|&r| self.c[r]).sum::<f64>() * self.h * self.h
    }

    pub fn step(&mut self, dt: f64) {
        let c = &self.c;
        let (diag, source) = (&self.diag, &self.source);
        let (rs, col, w) = (&self.row_start, &self.col, &self.weight);
        self.scratch.par_iter_mut().enumerate().for_each(|(r, out)| {
            let mut acc = source[r] - diag[r] * c[r];
            for e in rs[r]..rs[r + 1] {
                acc += w[e] * c[col[e]];
            }
            *out = c[r] + dt * acc;
        });
        std::mem::swap(&mut self.c, &mut self.scratch);
    }
}

/// Runs explicit Euler to `T_end` with substeps aligned to the `n_t` samples.
pub fn solve_cdr_with_stats(
    g: &VoxelGeometry,
    flow: &FlowField,
    params: &CdrParams,
) -> Result<(BreakthroughCurve, SolverStats), CdrError> {
    let mut solver = CdrSolver::new(g, flow, params)?;
    let t_grid = params.t_grid();
    let interval = params.t_end / (params.n_t - 1) as f64;
    let sub = (interval / solver.max_dt(params, flow)).ceil().max(1.0) as usize;
    let dt = interval / sub as f64;
    let mut values = Vec::with_capacity(params.n_t);
    values.push(solver.outlet_integral());
    let (mut min_c, mut max_c) = (0.0f64, 0.0f64);
    let mut step = 0;
    for _ in 1..params.n_t {
        for _ in 0..sub {
            solver.step(dt);
            step += 1;
        }
        for &x in solver.concentration() {
            if !x.is_finite() {
                return Err(CdrError::NonFinite { step });
            }
            min_c = min_c.min(x);
            max_c = max_c.max(x);
        }
        values.push(solver.outlet_integral());
    }
    Ok((
        BreakthroughCurve { t_grid, values },
        SolverStats {
            n_steps: step,
            dt,
            min_c,
            max_c,
        },
    ))
}

pub fn solve_cdr(
    g: &VoxelGeometry,
    flow: &FlowField,
    params: &CdrParams,
) -> Result<BreakthroughCurve, CdrError> {
    solve_cdr_with_stats(g, flow, params).map(|(c, _)| c)
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Cdr(#[from] CdrError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub seed: u64,
    pub config: GeometryConfig,
    /// `None` on success.
    pub error: Option<String>,
    pub stats: Option<SolverStats>,
    pub cg_iterations: Option<usize>,
    pub wall_time_s: f64,
}

pub struct SampleOutcome {
    pub record: SampleRecord,
    pub geometry: Option<VoxelGeometry>,
    pub curve: Option<BreakthroughCurve>,
}

/// Flow and CDR solve on an existing geometry; returns the curve, solver stats
/// and CG iteration count.
pub fn simulate(
    g: &VoxelGeometry,
    params: &CdrParams,
    u_in: f64,
) -> Result<(BreakthroughCurve, SolverStats, usize), SampleError> {
    let flow = potential_flow(g, u_in)?;
    let (curve, stats) = solve_cdr_with_stats(g, &flow, params)?;
    Ok((curve, stats, flow.cg_iterations))
}

/// Geometry generation, flow and CDR solve for one configuration.
pub fn run_sample(
    id: &str,
    config: &GeometryConfig,
    params: &CdrParams,
    u_in: f64,
) -> SampleOutcome {
    let start = Instant::now();
    let mut geometry = None;
    let result = generate_sample(config)
        .map_err(SampleError::from)
        .and_then(|g| {
            let out = simulate(&g, params, u_in);
            geometry = Some(g);
            out
        });
    let wall_time_s = start.elapsed().as_secs_f64();
    let (curve, stats, cg_iterations, error) = match result {
        Ok((c, s, it)) => (Some(c), Some(s), Some(it), None),
        Err(e) => (None, None, None, Some(e.to_string())),
    };
    SampleOutcome {
        record: SampleRecord {
            id: id.to_string(),
            seed: config.rng_seed,
            config: config.clone(),
            error,
            stats,
            cg_iterations,
            wall_time_s,
        },
        geometry,
        curve,
    }
}

/// Runs every configuration in parallel; failures are recorded per sample.
pub fn generate_dataset(
    configs: &[(String, GeometryConfig)],
    params: &CdrParams,
    u_in: f64,
) -> Vec<SampleOutcome> {
    configs
        .par_iter()
        .map(|(id, cfg)| run_sample(id, cfg, params, u_in))
        .collect()
}

/// `id,t_0,…,t_{n−1}` then one row per curve, 17 significant digits.
pub fn curves_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a [f64])>, n_t: usize) -> String {
    let mut s = String::from("id");
    for k in 0..n_t {
        s.push_str(&format!(",t_{k}"));
    }
    s.push('\n');
    for (id, vals) in rows {
        s.push_str(id);
        for v in vals {
            s.push_str(&format!(",{v:.16e}"));
        }
        s.push('\n');
    }
    s
}

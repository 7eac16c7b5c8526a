//! Level-set transport and reinitialisation on the background mesh.
//!
//! Transport solves `φ_t + β·∇φ = 0` with Crank–Nicolson in time and a
//! facet penalty on the jump of the normal derivative, weighted by the local
//! normal velocity so that regions with `β = 0` are left alone.
//! Reinitialisation drives `φ` towards a signed distance function by Picard
//! iteration on the steady eikonal problem.

use crate::error::{Error, Result};
use crate::fem::{mass_matrix, normal_derivative_jump};
use crate::levelset::{build_cut, CellState, LevelSet};
use crate::linalg::{CsrMatrix, Factorization};
use crate::mesh::{FacetSkeleton, Mesh2D};
use crate::quadrature::{SEGMENT_GAUSS3, TRIANGLE_ORDER2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveConfig {
    pub c_e: f64,
    pub dt: f64,
    pub steps: usize,
    /// Scale the facet penalty by `|n_F·β|` rather than by `max|β|`.
    pub velocity_weighted: bool,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            c_e: 0.01,
            dt: 0.01,
            steps: 1,
            velocity_weighted: true,
        }
    }
}

impl EvolveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.c_e > 0.0) || !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "evolution needs c_e > 0 and dt > 0 (got c_e = {}, dt = {})",
                self.c_e, self.dt
            )));
        }
        Ok(())
    }
}

/// `∫_F |n·β| ds` for `β` linear along the facet.
fn abs_linear_integral(b0: f64, b1: f64, len: f64) -> f64 {
    if b0 * b1 >= 0.0 {
        0.5 * len * (b0.abs() + b1.abs())
    } else {
        0.5 * len * (b0 * b0 + b1 * b1) / (b0.abs() + b1.abs())
    }
}

/// Advection form `∫ v β·∇φ` with nodal P1 `β`.
pub fn advection_matrix(mesh: &Mesh2D, beta: &[[f64; 2]]) -> Result<CsrMatrix> {
    let mut trips = Vec::with_capacity(9 * mesh.num_cells());
    for (c, t) in mesh.triangles().iter().enumerate() {
        let a = mesh.cell_area(c);
        let g = mesh.cell_basis_gradients(c);
        for i in 0..3 {
            for j in 0..3 {
                let mut v = 0.0;
                for k in 0..3 {
                    let m = if i == k { a / 6.0 } else { a / 12.0 };
                    let b = beta[t[k]];
                    v += m * (b[0] * g[j][0] + b[1] * g[j][1]);
                }
                trips.push((t[i], t[j], v));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_vertices(), &trips)
}

/// Facet penalty `Σ_F c_e h_F² ∫_F w_F ⟦∂_n φ⟧⟦∂_n v⟧`, with `w_F = |n_F·β|`
/// or `max|β|`.
pub fn transport_penalty(mesh: &Mesh2D, skel: &FacetSkeleton, beta: &[[f64; 2]], c_e: f64, weighted: bool) -> Result<CsrMatrix> {
    let bmax = beta.iter().fold(0.0f64, |m, b| m.max(b[0].hypot(b[1])));
    let mut trips = Vec::new();
    for (k, f) in skel.interior.iter().enumerate() {
        let w = if weighted {
            let nb = |v: usize| beta[v][0] * f.normal[0] + beta[v][1] * f.normal[1];
            abs_linear_integral(nb(f.vertices[0]), nb(f.vertices[1]), f.length)
        } else {
            bmax * f.length
        };
        if w == 0.0 {
            continue;
        }
        let scale = c_e * f.h * f.h * w;
        let jump = normal_derivative_jump(mesh, skel, k);
        for &(p, jp) in &jump {
            for &(q, jq) in &jump {
                trips.push((p, q, scale * jp * jq));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_vertices(), &trips)
}

/// Crank–Nicolson stepper for a fixed velocity field, in increment form
/// `(M + dt/2 K) δ = −dt K φ`.
#[derive(Debug)]
pub struct Transport {
    lhs: Factorization,
    /// `−dt K`.
    rhs: CsrMatrix,
    steps: usize,
}

impl Transport {
    pub fn new(mesh: &Mesh2D, skel: &FacetSkeleton, beta: &[[f64; 2]], cfg: EvolveConfig) -> Result<Self> {
        cfg.validate()?;
        if beta.len() != mesh.num_vertices() {
            return Err(Error::InvalidArgument("velocity length does not match mesh".into()));
        }
        let bmax = beta.iter().fold(0.0f64, |m, b| m.max(b[0].hypot(b[1])));
        let h = mesh.mesh_size();
        if bmax > 0.0 && cfg.dt > h / bmax {
            log::warn!("time step {:.3e} exceeds h/max|β| = {:.3e}", cfg.dt, h / bmax);
        }
        let m = mass_matrix(mesh)?;
        let op = advection_matrix(mesh, beta)?.add_scaled(
            1.0,
            &transport_penalty(mesh, skel, beta, cfg.c_e, cfg.velocity_weighted)?,
            1.0,
        )?;
        let half = 0.5 * cfg.dt;
        Ok(Self {
            lhs: Factorization::new(&m.add_scaled(1.0, &op, half)?)?,
            rhs: op.scaled(-cfg.dt),
            steps: cfg.steps,
        })
    }

    pub fn run(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let mut cur = phi.to_vec();
        for _ in 0..self.steps {
            let delta = self.lhs.solve(&self.rhs.matvec(&cur))?;
            for (c, d) in cur.iter_mut().zip(delta) {
                *c += d;
            }
        }
        Ok(cur)
    }
}

pub fn evolve(mesh: &Mesh2D, skel: &FacetSkeleton, phi: &LevelSet, beta: &[[f64; 2]], cfg: EvolveConfig) -> Result<LevelSet> {
    let out = Transport::new(mesh, skel, beta, cfg)?.run(phi.values())?;
    LevelSet::new(mesh, out)
}

/// Stabilisation of the reinitialisation problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReinitVariant {
    /// `∫ c_r1 h ‖w‖ ∇φ·∇v`. The weight `‖w‖ = |sign(φ₀)|` is taken with the
    /// exact sign, i.e. 1: the smoothed sign would make the viscosity vary
    /// across the interface band and bend a signed distance function there.
    Viscosity,
    /// `Σ_F c_r2 h_F² ∫_F ⟦∇φ⟧·⟦∇v⟧`.
    InteriorPenalty { c_r2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinitConfig {
    pub c_r1: f64,
    pub gamma_d: f64,
    pub variant: ReinitVariant,
    pub picard_tol: f64,
    pub picard_maxit: usize,
    /// Under-relaxation `θ ∈ (0, 1]` of the Picard update.
    pub relaxation: f64,
}

impl Default for ReinitConfig {
    fn default() -> Self {
        Self {
            c_r1: 0.5,
            gamma_d: 20.0,
            variant: ReinitVariant::Viscosity,
            picard_tol: 1e-6,
            picard_maxit: 50,
            relaxation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinitOutcome {
    pub phi: LevelSet,
    pub iterations: usize,
    pub converged: bool,
    /// Relative nodal change per Picard iteration.
    pub history: Vec<f64>,
    /// Nodes off the input's cut band whose sign changed. The Picard form
    /// also admits `−d` as a fixed point; a nonzero count means it drifted
    /// there somewhere and the result should not be trusted.
    pub sign_changes: usize,
}

/// `φ / √(φ² + h²|∇φ|²)`.
pub fn approx_sign(phi: f64, grad_norm: f64, h: f64) -> f64 {
    let d = (phi * phi + h * h * grad_norm * grad_norm).sqrt();
    if d == 0.0 {
        0.0
    } else {
        phi / d
    }
}

const GRAD_FLOOR: f64 = 1e-10;

fn gradient_jump(mesh: &Mesh2D, skel: &FacetSkeleton, facet: usize) -> Vec<(usize, [f64; 2])> {
    let f = &skel.interior[facet];
    let mut out: Vec<(usize, [f64; 2])> = Vec::with_capacity(4);
    for (cell, sign) in [(f.left, 1.0), (f.right, -1.0)] {
        let t = mesh.triangles()[cell];
        let g = mesh.cell_basis_gradients(cell);
        for a in 0..3 {
            let v = [sign * g[a][0], sign * g[a][1]];
            match out.iter_mut().find(|e| e.0 == t[a]) {
                Some(e) => {
                    e.1[0] += v[0];
                    e.1[1] += v[1];
                }
                None => out.push((t[a], v)),
            }
        }
    }
    out
}

fn sign_changes(mesh: &Mesh2D, states: &[CellState], before: &[f64], after: &[f64]) -> usize {
    let mut band = vec![false; mesh.num_vertices()];
    for (t, &st) in mesh.triangles().iter().zip(states) {
        if st == CellState::Cut {
            for &v in t {
                band[v] = true;
            }
        }
    }
    (0..before.len())
        .filter(|&v| !band[v] && (before[v] < 0.0) != (after[v] < 0.0))
        .count()
}

/// Picard iteration for the steady reinitialisation problem. The interface
/// penalty stays on the zero contour of the input.
pub fn reinitialize(mesh: &Mesh2D, skel: &FacetSkeleton, phi0: &LevelSet, cfg: ReinitConfig) -> Result<ReinitOutcome> {
    if !(cfg.c_r1 > 0.0 && cfg.gamma_d > 0.0 && cfg.picard_tol > 0.0 && cfg.relaxation > 0.0 && cfg.relaxation <= 1.0) {
        return Err(Error::InvalidArgument("reinitialisation coefficients must be positive".into()));
    }
    let n = mesh.num_vertices();
    let p0 = phi0.values();
    let cut0 = build_cut(mesh, p0)?;

    // Parts that do not depend on the iterate: the sign samples, the load
    // and the interface penalty.
    let mut fixed = Vec::new();
    let mut load = vec![0.0; n];
    let mut signs = Vec::with_capacity(mesh.num_cells());
    for (c, t) in mesh.triangles().iter().enumerate() {
        let h = mesh.cell_diameter(c);
        let a = mesh.cell_area(c);
        let g = mesh.cell_basis_gradients(c);
        let grad0 = [0, 1].map(|k| (0..3).map(|j| p0[t[j]] * g[j][k]).sum::<f64>());
        let gn = grad0[0].hypot(grad0[1]);
        let mut s_q = [0.0; 3];
        for (q, &(xi, w)) in TRIANGLE_ORDER2.iter().enumerate() {
            let lam = [1.0 - xi[0] - xi[1], xi[0], xi[1]];
            let val: f64 = (0..3).map(|j| lam[j] * p0[t[j]]).sum();
            s_q[q] = approx_sign(val, gn, h);
            for i in 0..3 {
                load[t[i]] += 2.0 * a * w * lam[i] * s_q[q];
            }
        }
        signs.push(s_q);
        if let Some(cc) = &cut0.cells[c] {
            let pts = mesh.cell_points(c);
            let seg = &cc.interface;
            let len = seg.length();
            for &(s, w) in &SEGMENT_GAUSS3 {
                let x = seg.at(s);
                let lam = [0, 1, 2].map(|j| 1.0 + g[j][0] * (x[0] - pts[j][0]) + g[j][1] * (x[1] - pts[j][1]));
                for i in 0..3 {
                    for j in 0..3 {
                        fixed.push((t[i], t[j], cfg.gamma_d / h * w * len * lam[i] * lam[j]));
                    }
                }
            }
        }
    }
    if let ReinitVariant::InteriorPenalty { c_r2 } = cfg.variant {
        for (k, f) in skel.interior.iter().enumerate() {
            let jump = gradient_jump(mesh, skel, k);
            let scale = c_r2 * f.h * f.h * f.length;
            for &(p, jp) in &jump {
                for &(q, jq) in &jump {
                    fixed.push((p, q, scale * (jp[0] * jq[0] + jp[1] * jq[1])));
                }
            }
        }
    }

    let mut cur = p0.to_vec();
    let mut history = Vec::new();
    for it in 1..=cfg.picard_maxit {
        let mut trips = fixed.clone();
        for (c, t) in mesh.triangles().iter().enumerate() {
            let h = mesh.cell_diameter(c);
            let a = mesh.cell_area(c);
            let g = mesh.cell_basis_gradients(c);
            let grad = [0, 1].map(|k| (0..3).map(|j| cur[t[j]] * g[j][k]).sum::<f64>());
            let gn = grad[0].hypot(grad[1]).max(GRAD_FLOOR);
            let d = [grad[0] / gn, grad[1] / gn];
            let s_q = signs[c];
            for (q, &(xi, w)) in TRIANGLE_ORDER2.iter().enumerate() {
                let lam = [1.0 - xi[0] - xi[1], xi[0], xi[1]];
                for i in 0..3 {
                    for j in 0..3 {
                        let adv = s_q[q] * (d[0] * g[j][0] + d[1] * g[j][1]);
                        trips.push((t[i], t[j], 2.0 * a * w * lam[i] * adv));
                    }
                }
            }
            if cfg.variant == ReinitVariant::Viscosity {
                for i in 0..3 {
                    for j in 0..3 {
                        let k = g[i][0] * g[j][0] + g[i][1] * g[j][1];
                        trips.push((t[i], t[j], cfg.c_r1 * h * a * k));
                    }
                }
            }
        }
        let mat = CsrMatrix::from_triplets(n, &trips)?;
        let next = Factorization::new(&mat)?.solve(&load)?;
        let scale = next.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let change = next.iter().zip(&cur).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        history.push(change);
        let theta = cfg.relaxation;
        cur = next.iter().zip(&cur).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
        if change <= cfg.picard_tol {
            return Ok(ReinitOutcome {
                sign_changes: sign_changes(mesh, &cut0.states, p0, &cur),
                phi: LevelSet::new(mesh, cur)?,
                iterations: it,
                converged: true,
                history,
            });
        }
    }
    log::warn!(
        "reinitialisation stopped after {} Picard iterations (last change {:.3e})",
        cfg.picard_maxit,
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(ReinitOutcome {
        sign_changes: sign_changes(mesh, &cut0.states, p0, &cur),
        phi: LevelSet::new(mesh, cur)?,
        iterations: cfg.picard_maxit,
        converged: false,
        history,
    })
}

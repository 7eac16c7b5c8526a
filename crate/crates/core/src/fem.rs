//! P1 finite elements on the cut domain: ghost-penalty stabilised elasticity
//! and Poisson operators, the Hilbertian extension solve, and the nodal
//! velocity used for transport.
//!
//! Integrands of the stiffness forms are constant on a background cell, so a
//! cut cell contributes its full-cell density scaled by the measure of its IN
//! part. Mass and load terms are integrated on the sub-triangles.

use crate::dual::Scalar;
use crate::error::{Error, Result};
use crate::functionals::{CellGeom, Functional};
use crate::levelset::{CellState, CutTopology, Phase};
use crate::linalg::{cg_jacobi, CgOptions, CsrMatrix, Factorization};
use crate::mesh::{FacetSkeleton, Mesh2D};
use crate::quadrature::{SEGMENT_GAUSS3, TRIANGLE_ORDER2};

/// Lamé parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lame {
    pub lambda: f64,
    pub mu: f64,
}

impl Default for Lame {
    fn default() -> Self {
        Self {
            lambda: 0.5769,
            mu: 0.3846,
        }
    }
}

pub const DEFAULT_GHOST_GAMMA: f64 = 1e-7;

/// Degrees of freedom of a scalar or vector P1 space on the background mesh.
///
/// Dof `node * components + k`. Dofs of nodes touching no IN or CUT cell are
/// inactive and held at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FESpace {
    pub num_nodes: usize,
    pub components: usize,
    pub active: Vec<bool>,
    pub dirichlet: Vec<Option<f64>>,
}

impl FESpace {
    pub fn new(mesh: &Mesh2D, states: &[CellState], components: usize) -> Self {
        let mut node_active = vec![false; mesh.num_vertices()];
        for (c, t) in mesh.triangles().iter().enumerate() {
            if states[c] != CellState::Out {
                for &v in t {
                    node_active[v] = true;
                }
            }
        }
        Self::from_nodes(&node_active, components)
    }

    /// Every node active.
    pub fn whole(mesh: &Mesh2D, components: usize) -> Self {
        Self::from_nodes(&vec![true; mesh.num_vertices()], components)
    }

    fn from_nodes(node_active: &[bool], components: usize) -> Self {
        let active = node_active
            .iter()
            .flat_map(|&a| std::iter::repeat(a).take(components))
            .collect::<Vec<_>>();
        Self {
            num_nodes: node_active.len(),
            components,
            dirichlet: vec![None; active.len()],
            active,
        }
    }

    pub fn ndofs(&self) -> usize {
        self.num_nodes * self.components
    }

    pub fn dof(&self, node: usize, comp: usize) -> usize {
        node * self.components + comp
    }

    /// Prescribe `value` on every component of `nodes`.
    pub fn fix_nodes(&mut self, nodes: &[usize], value: f64) {
        for &n in nodes {
            for k in 0..self.components {
                let d = self.dof(n, k);
                self.dirichlet[d] = Some(value);
            }
        }
    }

    pub fn fix_dof(&mut self, dof: usize, value: f64) {
        self.dirichlet[dof] = Some(value);
    }

    pub fn is_free(&self, dof: usize) -> bool {
        self.active[dof] && self.dirichlet[dof].is_none()
    }
}

/// Reduced system over the free dofs of an [`FESpace`].
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Full dof index of each reduced unknown.
    pub free: Vec<usize>,
    /// Full-length vector holding the prescribed values (zero elsewhere).
    pub lifting: Vec<f64>,
    /// Sizes of free-dof groups coupled to no prescribed dof and carrying no
    /// isolated-volume penalty. Non-empty means the operator is singular.
    pub floating: Vec<usize>,
}

impl LinearSystem {
    /// Eliminate prescribed and inactive dofs from `K u = f`, moving the
    /// known values to the right-hand side. `anchored[d]` marks dofs that a
    /// zeroth-order term already pins.
    pub fn reduce(space: &FESpace, full: &CsrMatrix, full_rhs: &[f64], anchored: &[bool]) -> Result<Self> {
        let n = space.ndofs();
        if full.dim() != n || full_rhs.len() != n {
            return Err(Error::InvalidArgument("operator size does not match the space".into()));
        }
        let mut index = vec![usize::MAX; n];
        let mut free = Vec::new();
        for d in 0..n {
            if space.is_free(d) {
                index[d] = free.len();
                free.push(d);
            }
        }
        let lifting: Vec<f64> = (0..n)
            .map(|d| if space.active[d] { space.dirichlet[d].unwrap_or(0.0) } else { 0.0 })
            .collect();
        let mut trips = Vec::with_capacity(full.nnz());
        let mut rhs: Vec<f64> = free.iter().map(|&d| full_rhs[d]).collect();
        let mut parent: Vec<usize> = (0..free.len()).collect();
        let mut anchor: Vec<bool> = free.iter().map(|&d| anchored[d]).collect();
        for (r, &d) in free.iter().enumerate() {
            for (j, v) in full.row(d) {
                if index[j] != usize::MAX {
                    trips.push((r, index[j], v));
                    if v != 0.0 {
                        union(&mut parent, r, index[j]);
                    }
                } else if space.dirichlet[j].is_some() && v != 0.0 {
                    rhs[r] -= v * lifting[j];
                    anchor[r] = true;
                }
            }
        }
        let mut sizes = std::collections::BTreeMap::<usize, (usize, bool)>::new();
        for r in 0..free.len() {
            let root = find(&mut parent, r);
            let e = sizes.entry(root).or_insert((0, false));
            e.0 += 1;
            e.1 |= anchor[r];
        }
        let floating = sizes.values().filter(|e| !e.1).map(|e| e.0).collect();
        Ok(Self {
            matrix: CsrMatrix::from_triplets(free.len(), &trips)?,
            rhs,
            free,
            lifting,
            floating,
        })
    }

    /// Full-length vector from reduced unknowns.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.lifting.clone();
        for (r, &d) in self.free.iter().enumerate() {
            out[d] = x[r];
        }
        out
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&d| full[d]).collect()
    }

    pub fn check_anchored(&self) -> Result<()> {
        if self.floating.is_empty() {
            Ok(())
        } else {
            Err(Error::SingularSystem(format!(
                "{} group(s) of unknowns (sizes {:?}) are not held by any Dirichlet condition; suspected untagged isolated volume",
                self.floating.len(),
                self.floating
            )))
        }
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMethod {
    Direct,
    Cg(CgOptions),
}

/// Solve and return the full-length dof vector.
pub fn solve(system: &LinearSystem, method: SolveMethod) -> Result<Vec<f64>> {
    system.check_anchored()?;
    let x = match method {
        SolveMethod::Direct => Factorization::new(&system.matrix)?.solve(&system.rhs)?,
        SolveMethod::Cg(opts) => cg_jacobi(&system.matrix, &system.rhs, opts)?.x,
    };
    Ok(system.expand(&x))
}

/// Integrals over the part of one cell in a given phase: measure, `∫ λ_a`
/// and `∫ λ_a λ_b` for the cell's three hat functions.
#[derive(Debug, Clone, Copy)]
pub struct CellMeasures<S> {
    pub area: S,
    pub hat: [S; 3],
    pub mass: [[S; 3]; 3],
}

pub fn cell_measures<S: Scalar>(mesh: &Mesh2D, c: usize, geom: CellGeom<'_, S>, phase: Phase) -> CellMeasures<S> {
    let zero = CellMeasures {
        area: S::zero(),
        hat: [S::zero(); 3],
        mass: [[S::zero(); 3]; 3],
    };
    match geom {
        CellGeom::Whole(p) if p == phase => {
            let a = mesh.cell_area(c);
            let mut m = [[S::from_f64(a / 12.0); 3]; 3];
            for (k, row) in m.iter_mut().enumerate() {
                row[k] = S::from_f64(a / 6.0);
            }
            CellMeasures {
                area: S::from_f64(a),
                hat: [S::from_f64(a / 3.0); 3],
                mass: m,
            }
        }
        CellGeom::Whole(_) => zero,
        CellGeom::Cut(cc) => {
            let pts = mesh.cell_points(c);
            let g = mesh.cell_basis_gradients(c);
            let mut out = zero;
            for t in cc.sub.iter().filter(|t| t.phase == phase) {
                let det = t.jacobian_det();
                out.area += det * 0.5;
                for &(xi, w) in &TRIANGLE_ORDER2 {
                    let x = t.map(xi);
                    let lam = [0, 1, 2].map(|a| {
                        (x[0] - pts[a][0]) * g[a][0] + (x[1] - pts[a][1]) * g[a][1] + 1.0
                    });
                    let dw = det * w;
                    for a in 0..3 {
                        out.hat[a] += lam[a] * dw;
                        for b in 0..3 {
                            out.mass[a][b] += lam[a] * lam[b] * dw;
                        }
                    }
                }
            }
            out
        }
    }
}

/// `∇λ_a·∇λ_b` on a cell.
pub fn laplace_density(g: &[[f64; 2]; 3]) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            k[a][b] = g[a][0] * g[b][0] + g[a][1] * g[b][1];
        }
    }
    k
}

/// `σ(λ_a e_i) : ε(λ_b e_j)` on a cell, indexed `[2a + i][2b + j]`.
pub fn elasticity_density(g: &[[f64; 2]; 3], lame: Lame) -> [[f64; 6]; 6] {
    let mut k = [[0.0; 6]; 6];
    for a in 0..3 {
        for b in 0..3 {
            let gg = g[a][0] * g[b][0] + g[a][1] * g[b][1];
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = lame.lambda * g[a][i] * g[b][j] + lame.mu * g[a][j] * g[b][i];
                    if i == j {
                        v += lame.mu * gg;
                    }
                    k[2 * a + i][2 * b + j] = v;
                }
            }
        }
    }
    k
}

/// Interior facets carrying the ghost penalty: at least one cut neighbour,
/// both neighbours active.
pub fn ghost_facets(skel: &FacetSkeleton, states: &[CellState]) -> Vec<usize> {
    skel.interior
        .iter()
        .enumerate()
        .filter(|(_, f)| {
            let (l, r) = (states[f.left], states[f.right]);
            (l == CellState::Cut || r == CellState::Cut) && l != CellState::Out && r != CellState::Out
        })
        .map(|(k, _)| k)
        .collect()
}

/// For an interior facet: the (up to four) nodes of its two cells and the
/// jump of the normal derivative of each node's hat function.
pub fn normal_derivative_jump(mesh: &Mesh2D, skel: &FacetSkeleton, facet: usize) -> Vec<(usize, f64)> {
    let f = &skel.interior[facet];
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(4);
    for (cell, sign) in [(f.left, 1.0), (f.right, -1.0)] {
        let t = mesh.triangles()[cell];
        let g = mesh.cell_basis_gradients(cell);
        for a in 0..3 {
            let v = sign * (g[a][0] * f.normal[0] + g[a][1] * f.normal[1]);
            match out.iter_mut().find(|e| e.0 == t[a]) {
                Some(e) => e.1 += v,
                None => out.push((t[a], v)),
            }
        }
    }
    out
}

/// Cells whose IN part belongs to an isolated volume, and the weight `w` of
/// the regularising term `k_ψ(d, s) = w ∫ ψ d·s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Isolation {
    cells: Vec<bool>,
    weight: f64,
}

impl Isolation {
    pub fn new(mesh: &Mesh2D, cells: Vec<bool>) -> Result<Self> {
        Self::weighted(mesh, cells, 1.0)
    }

    pub fn weighted(mesh: &Mesh2D, cells: Vec<bool>, weight: f64) -> Result<Self> {
        if cells.len() != mesh.num_cells() {
            return Err(Error::InvalidArgument("isolation flags do not match the mesh".into()));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidArgument(format!("k_ψ weight must be positive, got {weight}")));
        }
        Ok(Self { cells, weight })
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn num_flagged(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// `k_ψ` factor on cell `c`: the weight if flagged, else zero.
    pub fn factor(&self, c: usize) -> f64 {
        if self.cells[c] {
            self.weight
        } else {
            0.0
        }
    }
}

/// Options shared by the cut operators.
#[derive(Debug, Clone, Copy)]
pub struct CutOperator<'a> {
    pub mesh: &'a Mesh2D,
    pub skeleton: &'a FacetSkeleton,
    pub cut: &'a CutTopology<f64>,
    pub psi: Option<&'a Isolation>,
    pub gamma: f64,
}

impl<'a> CutOperator<'a> {
    fn geom(&self, c: usize) -> CellGeom<'a, f64> {
        match (&self.cut.cells[c], self.cut.states[c]) {
            (Some(cc), _) => CellGeom::Cut(cc),
            (None, CellState::In) => CellGeom::Whole(Phase::In),
            _ => CellGeom::Whole(Phase::Out),
        }
    }

    fn spring(&self, c: usize) -> f64 {
        self.psi.map_or(0.0, |p| p.factor(c))
    }

    /// Cut elasticity operator `a + k_ψ + j` on all `2N` dofs, plus the
    /// dofs pinned by `k_ψ`.
    pub fn elasticity(&self, lame: Lame) -> Result<(CsrMatrix, Vec<bool>)> {
        let mesh = self.mesh;
        let n = 2 * mesh.num_vertices();
        let mut trips = Vec::new();
        let mut anchored = vec![false; n];
        for c in 0..mesh.num_cells() {
            if self.cut.states[c] == CellState::Out {
                continue;
            }
            let t = mesh.triangles()[c];
            let m = cell_measures(mesh, c, self.geom(c), Phase::In);
            let k = elasticity_density(&mesh.cell_basis_gradients(c), lame);
            let w = self.spring(c);
            for a in 0..3 {
                for i in 0..2 {
                    for b in 0..3 {
                        for j in 0..2 {
                            let mut v = m.area * k[2 * a + i][2 * b + j];
                            if i == j {
                                v += w * m.mass[a][b];
                            }
                            trips.push((2 * t[a] + i, 2 * t[b] + j, v));
                        }
                    }
                    if w > 0.0 {
                        anchored[2 * t[a] + i] = true;
                    }
                }
            }
        }
        let scale = self.gamma * (lame.lambda + lame.mu);
        self.ghost(&mut trips, scale, 2);
        Ok((CsrMatrix::from_triplets(n, &trips)?, anchored))
    }

    /// Cut Poisson operator `∫ ∇u·∇v + k_ψ + j` on `N` dofs.
    pub fn poisson(&self) -> Result<(CsrMatrix, Vec<bool>)> {
        let mesh = self.mesh;
        let n = mesh.num_vertices();
        let mut trips = Vec::new();
        let mut anchored = vec![false; n];
        for c in 0..mesh.num_cells() {
            if self.cut.states[c] == CellState::Out {
                continue;
            }
            let t = mesh.triangles()[c];
            let m = cell_measures(mesh, c, self.geom(c), Phase::In);
            let k = laplace_density(&mesh.cell_basis_gradients(c));
            let w = self.spring(c);
            for a in 0..3 {
                for b in 0..3 {
                    let v = m.area * k[a][b] + w * m.mass[a][b];
                    trips.push((t[a], t[b], v));
                }
                if w > 0.0 {
                    anchored[t[a]] = true;
                }
            }
        }
        self.ghost(&mut trips, self.gamma, 1);
        Ok((CsrMatrix::from_triplets(n, &trips)?, anchored))
    }

    fn ghost(&self, trips: &mut Vec<(usize, usize, f64)>, scale: f64, comps: usize) {
        if scale == 0.0 {
            return;
        }
        for k in ghost_facets(self.skeleton, &self.cut.states) {
            let f = &self.skeleton.interior[k];
            let w = scale * f.length * f.h.powi(3);
            let jump = normal_derivative_jump(self.mesh, self.skeleton, k);
            for &(p, jp) in &jump {
                for &(q, jq) in &jump {
                    for i in 0..comps {
                        trips.push((comps * p + i, comps * q + i, w * jp * jq));
                    }
                }
            }
        }
    }

    /// `∫_Ω f v` for constant `f`.
    pub fn scalar_load(&self, f: f64) -> Vec<f64> {
        let mut rhs = vec![0.0; self.mesh.num_vertices()];
        for c in 0..self.mesh.num_cells() {
            let m = cell_measures(self.mesh, c, self.geom(c), Phase::In);
            for (a, &v) in self.mesh.triangles()[c].iter().enumerate() {
                rhs[v] += f * m.hat[a];
            }
        }
        rhs
    }
}

/// `∫_{F ∩ Ω} s·g ds` over the given mesh boundary facets (indices into
/// [`Mesh2D::boundary_facets`]) for the vector space.
pub fn traction_load(mesh: &Mesh2D, values: &[f64], facets: &[usize], g: [f64; 2]) -> Vec<f64> {
    let mut rhs = vec![0.0; 2 * mesh.num_vertices()];
    let verts = mesh.vertices();
    for &k in facets {
        let [a, b] = mesh.boundary_facets()[k];
        let (fa, fb) = (values[a], values[b]);
        // Parameter interval of the facet inside Ω.
        let (s0, s1) = match (fa < 0.0, fb < 0.0) {
            (true, true) => (0.0, 1.0),
            (false, false) => continue,
            (true, false) => (0.0, fa.abs() / (fa.abs() + fb.abs())),
            (false, true) => (fa.abs() / (fa.abs() + fb.abs()), 1.0),
        };
        let len = (verts[b][0] - verts[a][0]).hypot(verts[b][1] - verts[a][1]);
        for &(s, w) in &SEGMENT_GAUSS3 {
            let x = s0 + (s1 - s0) * s;
            let jw = w * len * (s1 - s0);
            for (node, lam) in [(a, 1.0 - x), (b, x)] {
                rhs[2 * node] += g[0] * lam * jw;
                rhs[2 * node + 1] += g[1] * lam * jw;
            }
        }
    }
    rhs
}

/// Consistent P1 mass matrix on the whole background mesh.
pub fn mass_matrix(mesh: &Mesh2D) -> Result<CsrMatrix> {
    let mut trips = Vec::with_capacity(9 * mesh.num_cells());
    for (c, t) in mesh.triangles().iter().enumerate() {
        let a = mesh.cell_area(c);
        for i in 0..3 {
            for j in 0..3 {
                trips.push((t[i], t[j], if i == j { a / 6.0 } else { a / 12.0 }));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_vertices(), &trips)
}

/// P1 stiffness `∫ ∇u·∇v` on the whole background mesh.
pub fn stiffness_matrix(mesh: &Mesh2D) -> Result<CsrMatrix> {
    let mut trips = Vec::with_capacity(9 * mesh.num_cells());
    for (c, t) in mesh.triangles().iter().enumerate() {
        let a = mesh.cell_area(c);
        let k = laplace_density(&mesh.cell_basis_gradients(c));
        for i in 0..3 {
            for j in 0..3 {
                trips.push((t[i], t[j], a * k[i][j]));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_vertices(), &trips)
}

/// Factorised `α²K + M` on the background mesh; maps a directional
/// derivative `dJ(φ; w_i)` to a smooth nodal field `g` with
/// `∫ α²∇g·∇w_i + g w_i = dJ(φ; w_i)`.
#[derive(Debug)]
pub struct HilbertianExtension {
    alpha: f64,
    factor: Factorization,
}

impl HilbertianExtension {
    pub fn new(mesh: &Mesh2D, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("smoothing length {alpha}")));
        }
        let h = stiffness_matrix(mesh)?.add_scaled(alpha * alpha, &mass_matrix(mesh)?, 1.0)?;
        Ok(Self {
            alpha,
            factor: Factorization::new(&h)?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn matrix(&self) -> &CsrMatrix {
        self.factor.matrix()
    }

    pub fn apply(&self, dj: &[f64]) -> Result<Vec<f64>> {
        self.factor.solve(dj)
    }
}

pub fn hilbertian_extension(dj: &[f64], mesh: &Mesh2D, alpha: f64) -> Result<Vec<f64>> {
    HilbertianExtension::new(mesh, alpha)?.apply(dj)
}

/// Area-weighted average of the P1 gradients of the cells around each node.
pub fn nodal_gradient(mesh: &Mesh2D, values: &[f64]) -> Vec<[f64; 2]> {
    let mut acc = vec![[0.0; 2]; mesh.num_vertices()];
    let mut wsum = vec![0.0; mesh.num_vertices()];
    for (c, t) in mesh.triangles().iter().enumerate() {
        let g = mesh.cell_basis_gradients(c);
        let a = mesh.cell_area(c);
        let grad = [0, 1].map(|k| (0..3).map(|j| values[t[j]] * g[j][k]).sum::<f64>());
        for &v in t {
            acc[v][0] += a * grad[0];
            acc[v][1] += a * grad[1];
            wsum[v] += a;
        }
    }
    acc.iter()
        .zip(&wsum)
        .map(|(g, w)| [g[0] / w, g[1] / w])
        .collect()
}

/// `β_i = g_i ∇̂φ_i / max(|∇̂φ_i|, 1e-10)`.
pub fn compute_velocity(mesh: &Mesh2D, phi: &[f64], g: &[f64]) -> Vec<[f64; 2]> {
    nodal_gradient(mesh, phi)
        .iter()
        .zip(g)
        .map(|(d, &gi)| {
            let n = d[0].hypot(d[1]).max(1e-10);
            [gi * d[0] / n, gi * d[1] / n]
        })
        .collect()
}

/// `a(u, v) + k_ψ(u, v) − ∫_Ω f v` for fixed nodal `u`, `v` on a scalar
/// space, written per cell so that it can be differentiated in `φ`. The
/// ghost penalty is left out: it depends on `φ` only through which facets
/// carry it.
#[derive(Debug, Clone, Copy)]
pub struct ScalarForm<'a> {
    pub u: &'a [f64],
    pub v: &'a [f64],
    pub f: f64,
    pub psi: Option<&'a Isolation>,
}

impl Functional for ScalarForm<'_> {
    fn cell<S: Scalar>(&self, mesh: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S> {
        let t = mesh.triangles()[c];
        let m = cell_measures(mesh, c, geom, Phase::In);
        let k = laplace_density(&mesh.cell_basis_gradients(c));
        let w = self.psi.map_or(0.0, |p| p.factor(c));
        let mut acc = S::zero();
        for a in 0..3 {
            let mut stiff = 0.0;
            for b in 0..3 {
                stiff += k[a][b] * self.u[t[b]];
                if w > 0.0 {
                    acc += m.mass[a][b] * (w * self.u[t[b]] * self.v[t[a]]);
                }
            }
            acc += m.area * (stiff * self.v[t[a]]) - m.hat[a] * (self.f * self.v[t[a]]);
        }
        Ok(acc)
    }
}

/// `a(u, v) + k_ψ(u, v)` for fixed nodal displacements, ghost penalty left
/// out as in [`ScalarForm`].
#[derive(Debug, Clone, Copy)]
pub struct ElasticForm<'a> {
    pub u: &'a [f64],
    pub v: &'a [f64],
    pub lame: Lame,
    pub psi: Option<&'a Isolation>,
}

impl Functional for ElasticForm<'_> {
    fn cell<S: Scalar>(&self, mesh: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S> {
        let t = mesh.triangles()[c];
        let m = cell_measures(mesh, c, geom, Phase::In);
        let k = elasticity_density(&mesh.cell_basis_gradients(c), self.lame);
        let dof = |a: usize, i: usize| 2 * t[a] + i;
        let mut stiff = 0.0;
        for a in 0..3 {
            for i in 0..2 {
                for b in 0..3 {
                    for j in 0..2 {
                        stiff += self.v[dof(a, i)] * k[2 * a + i][2 * b + j] * self.u[dof(b, j)];
                    }
                }
            }
        }
        let mut acc = m.area * stiff;
        let w = self.psi.map_or(0.0, |p| p.factor(c));
        if w > 0.0 {
            for a in 0..3 {
                for b in 0..3 {
                    let uv = self.u[dof(b, 0)] * self.v[dof(a, 0)] + self.u[dof(b, 1)] * self.v[dof(a, 1)];
                    acc += m.mass[a][b] * (w * uv);
                }
            }
        }
        Ok(acc)
    }
}

/// `∫_Ω u·v` for nodal fields with `components` entries per node.
#[derive(Debug, Clone, Copy)]
pub struct MassForm<'a> {
    pub u: &'a [f64],
    pub v: &'a [f64],
    pub components: usize,
}

impl Functional for MassForm<'_> {
    fn cell<S: Scalar>(&self, mesh: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S> {
        let t = mesh.triangles()[c];
        let m = cell_measures(mesh, c, geom, Phase::In);
        let k = self.components;
        let mut acc = S::zero();
        for a in 0..3 {
            for b in 0..3 {
                let uv: f64 = (0..k).map(|i| self.u[k * t[b] + i] * self.v[k * t[a] + i]).sum();
                acc += m.mass[a][b] * uv;
            }
        }
        Ok(acc)
    }
}

/// `∫_Ω u` for a nodal scalar field.
#[derive(Debug, Clone, Copy)]
pub struct MeanForm<'a> {
    pub u: &'a [f64],
}

impl Functional for MeanForm<'_> {
    fn cell<S: Scalar>(&self, mesh: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S> {
        let t = mesh.triangles()[c];
        let m = cell_measures(mesh, c, geom, Phase::In);
        Ok((0..3).map(|a| m.hat[a] * self.u[t[a]]).sum())
    }
}

/// `∫_Ω c θ div v` for a scalar `θ` and a vector `v`.
#[derive(Debug, Clone, Copy)]
pub struct ThermalLoadForm<'a> {
    pub theta: &'a [f64],
    pub v: &'a [f64],
    pub c: f64,
}

impl Functional for ThermalLoadForm<'_> {
    fn cell<S: Scalar>(&self, mesh: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S> {
        let t = mesh.triangles()[c];
        let g = mesh.cell_basis_gradients(c);
        let m = cell_measures(mesh, c, geom, Phase::In);
        let div: f64 = (0..3).map(|a| g[a][0] * self.v[2 * t[a]] + g[a][1] * self.v[2 * t[a] + 1]).sum();
        Ok((0..3).map(|b| m.hat[b] * (self.c * self.theta[t[b]] * div)).sum())
    }
}

/// Matrix of `θ ↦ ∫_Ω c θ div v`: rows are the `2N` vector dofs, columns the
/// `N` scalar dofs, as `(row, column, value)` triplets.
pub fn thermal_coupling(mesh: &Mesh2D, cut: &CutTopology<f64>, c: f64) -> Vec<(usize, usize, f64)> {
    let mut trips = Vec::new();
    for cell in 0..mesh.num_cells() {
        if cut.states[cell] == CellState::Out {
            continue;
        }
        let geom = match &cut.cells[cell] {
            Some(cc) => CellGeom::Cut(cc),
            None => CellGeom::Whole(Phase::In),
        };
        let t = mesh.triangles()[cell];
        let g = mesh.cell_basis_gradients(cell);
        let m = cell_measures(mesh, cell, geom, Phase::In);
        for a in 0..3 {
            for i in 0..2 {
                for b in 0..3 {
                    trips.push((2 * t[a] + i, t[b], c * m.hat[b] * g[a][i]));
                }
            }
        }
    }
    trips
}

/// Cut mass matrix `∫_Ω u·v` with `components` entries per node.
pub fn cut_mass_matrix(mesh: &Mesh2D, cut: &CutTopology<f64>, components: usize) -> Result<CsrMatrix> {
    let k = components;
    let mut trips = Vec::new();
    for cell in 0..mesh.num_cells() {
        let geom = match (&cut.cells[cell], cut.states[cell]) {
            (Some(cc), _) => CellGeom::Cut(cc),
            (None, CellState::In) => CellGeom::Whole(Phase::In),
            _ => continue,
        };
        let t = mesh.triangles()[cell];
        let m = cell_measures(mesh, cell, geom, Phase::In);
        for a in 0..3 {
            for b in 0..3 {
                for i in 0..k {
                    trips.push((k * t[a] + i, k * t[b] + i, m.mass[a][b]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(k * mesh.num_vertices(), &trips)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{build_cut, LevelSet};
    use crate::linalg::{dot, solve_direct};
    use crate::mesh::{build_skeleton, build_structured_mesh, BBox};

    fn setup(n: usize, f: impl Fn([f64; 2]) -> f64) -> (Mesh2D, FacetSkeleton, LevelSet, CutTopology<f64>) {
        let mesh = build_structured_mesh(n, n, BBox::unit()).unwrap();
        let skel = build_skeleton(&mesh).unwrap();
        let phi = LevelSet::from_fn(&mesh, f).unwrap();
        let cut = build_cut(&mesh, phi.values()).unwrap();
        (mesh, skel, phi, cut)
    }

    #[test]
    fn full_domain_poisson_matches_plain_assembly() {
        let (mesh, skel, _, cut) = setup(8, |_| -1.0);
        let op = CutOperator {
            mesh: &mesh,
            skeleton: &skel,
            cut: &cut,
            psi: None,
            gamma: 1.0,
        };
        let (k, _) = op.poisson().unwrap();
        let plain = stiffness_matrix(&mesh).unwrap();
        let diff = k.add_scaled(1.0, &plain, -1.0).unwrap();
        assert!(diff.triplets().iter().all(|e| e.2.abs() < 1e-14));
        assert!(ghost_facets(&skel, &cut.states).is_empty());
    }

    #[test]
    fn cut_measures_match_polygon_area() {
        let (mesh, _, _, cut) = setup(7, |p| p[0] + 0.4 * p[1] - 0.63);
        for (c, cc) in cut.cut_cells() {
            let m = cell_measures(&mesh, c, CellGeom::Cut(cc), Phase::In);
            assert!((m.area - cc.phase_area(Phase::In)).abs() < 1e-16);
            let hat: f64 = m.hat.iter().sum();
            assert!((hat - m.area).abs() < 1e-15);
            let mass: f64 = m.mass.iter().flatten().sum();
            assert!((mass - m.area).abs() < 1e-15);
        }
    }

    #[test]
    fn elasticity_patch_test() {
        // Linear displacement on a planar-cut domain, Dirichlet on ∂D.
        let (mesh, skel, _, cut) = setup(8, |p| p[0] - 0.67);
        let op = CutOperator {
            mesh: &mesh,
            skeleton: &skel,
            cut: &cut,
            psi: None,
            gamma: DEFAULT_GHOST_GAMMA,
        };
        let (k, anchored) = op.elasticity(Lame::default()).unwrap();
        assert!(k.asymmetry() < 1e-12);
        let mut space = FESpace::new(&mesh, &cut.states, 2);
        // ε_xy = 0 and σ_xx = λ(a + b) + 2μa = 0, so the vertical interface
        // is traction free.
        let lame = Lame::default();
        let b = 0.3;
        let a = -lame.lambda * b / (lame.lambda + 2.0 * lame.mu);
        let exact = |p: [f64; 2]| [0.1 + a * p[0] - 0.2 * p[1], -0.05 + 0.2 * p[0] + b * p[1]];
        for (v, p) in mesh.vertices().iter().enumerate() {
            if p[0] == 0.0 || p[0] == 1.0 || p[1] == 0.0 || p[1] == 1.0 {
                let u = exact(*p);
                space.fix_dof(2 * v, u[0]);
                space.fix_dof(2 * v + 1, u[1]);
            }
        }
        let sys = LinearSystem::reduce(&space, &k, &vec![0.0; 2 * mesh.num_vertices()], &anchored).unwrap();
        let u = solve(&sys, SolveMethod::Direct).unwrap();
        for (v, p) in mesh.vertices().iter().enumerate() {
            if space.active[2 * v] {
                let e = exact(*p);
                assert!((u[2 * v] - e[0]).abs() < 1e-10 && (u[2 * v + 1] - e[1]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rigid_modes_are_in_the_kernel() {
        let (mesh, skel, _, cut) = setup(6, |p| p[0] - 0.55);
        let op = CutOperator {
            mesh: &mesh,
            skeleton: &skel,
            cut: &cut,
            psi: None,
            gamma: 1.0,
        };
        let (k, _) = op.elasticity(Lame::default()).unwrap();
        let n = mesh.num_vertices();
        let tx: Vec<f64> = (0..2 * n).map(|d| if d % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let rot: Vec<f64> = (0..2 * n)
            .map(|d| {
                let p = mesh.vertices()[d / 2];
                if d % 2 == 0 { -p[1] } else { p[0] }
            })
            .collect();
        assert!(k.matvec(&tx).iter().all(|v| v.abs() < 1e-13));
        assert!(k.matvec(&rot).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn floating_blob_detected_and_fixed_by_psi() {
        // Two disks; only the left one touches the clamped edge x = 0.
        let (mut mesh, skel, phi, cut) = setup(20, |p| {
            let a = (p[0] - 0.1).hypot(p[1] - 0.5) - 0.2;
            let b = (p[0] - 0.75).hypot(p[1] - 0.5) - 0.15;
            a.min(b)
        });
        mesh.tag_boundary("left", |p| p[0] == 0.0);
        let clamp = mesh.tagged_vertices("left");
        let mut space = FESpace::new(&mesh, &cut.states, 2);
        space.fix_nodes(&clamp, 0.0);
        let load = vec![0.01; 2 * mesh.num_vertices()];
        let mut op = CutOperator {
            mesh: &mesh,
            skeleton: &skel,
            cut: &cut,
            psi: None,
            gamma: DEFAULT_GHOST_GAMMA,
        };
        let (k, anchored) = op.elasticity(Lame::default()).unwrap();
        let sys = LinearSystem::reduce(&space, &k, &load, &anchored).unwrap();
        match solve(&sys, SolveMethod::Direct) {
            Err(Error::SingularSystem(msg)) => assert!(msg.contains("isolated volume")),
            other => panic!("{other:?}"),
        }
        let flags: Vec<bool> = (0..mesh.num_cells()).map(|c| mesh.cell_centroid(c)[0] > 0.5).collect();
        let psi = Isolation::new(&mesh, flags).unwrap();
        op.psi = Some(&psi);
        let (k, anchored) = op.elasticity(Lame::default()).unwrap();
        let sys = LinearSystem::reduce(&space, &k, &load, &anchored).unwrap();
        let u = solve(&sys, SolveMethod::Direct).unwrap();
        assert!(u.iter().all(|v| v.is_finite()));
        let _ = phi;
    }

    #[test]
    fn poisson_cut_matches_fitted_rectangle() {
        // -Δu = 1 on [0, 0.5] x [0, 1] with u = 0 on x = 0 and natural
        // conditions elsewhere: u = x (1 - x/2 ... ) reduces to the 1D
        // solution u = x (0.5 - x/2) · 2 / 2 = x(1 - x)/2 - correction.
        // 1D: u'' = -1, u(0) = 0, u'(L) = 0 -> u = x (L - x/2).
        let l = 0.5 + 1e-3;
        let (mut mesh, skel, _, cut) = setup(32, |p| p[0] - l);
        mesh.tag_boundary("left", |p| p[0] == 0.0);
        let op = CutOperator {
            mesh: &mesh,
            skeleton: &skel,
            cut: &cut,
            psi: None,
            gamma: DEFAULT_GHOST_GAMMA,
        };
        let (k, anchored) = op.poisson().unwrap();
        let mut space = FESpace::new(&mesh, &cut.states, 1);
        space.fix_nodes(&mesh.tagged_vertices("left"), 0.0);
        let sys = LinearSystem::reduce(&space, &k, &op.scalar_load(1.0), &anchored).unwrap();
        let u = solve(&sys, SolveMethod::Direct).unwrap();
        let h = 1.0 / 32.0;
        for (v, p) in mesh.vertices().iter().enumerate() {
            if p[0] <= l {
                let e = p[0] * (l - p[0] / 2.0);
                assert!((u[v] - e).abs() < h * h, "{} {} {}", p[0], u[v], e);
            }
        }
        let cg = solve(&sys, SolveMethod::Cg(CgOptions { rel_tol: 1e-12, max_iter: 20_000 })).unwrap();
        let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(u.iter().zip(&cg).all(|(a, b)| (a - b).abs() < 1e-6 * scale));
    }

    #[test]
    fn psi_everywhere_regularises_poisson() {
        let (mesh, skel, _, cut) = setup(6, |_| -1.0);
        let psi = Isolation::new(&mesh, vec![true; mesh.num_cells()]).unwrap();
        let op = CutOperator {
            mesh: &mesh,
            skeleton: &skel,
            cut: &cut,
            psi: Some(&psi),
            gamma: DEFAULT_GHOST_GAMMA,
        };
        let (k, anchored) = op.poisson().unwrap();
        let space = FESpace::new(&mesh, &cut.states, 1);
        let sys = LinearSystem::reduce(&space, &k, &op.scalar_load(1.0), &anchored).unwrap();
        let u = solve(&sys, SolveMethod::Direct).unwrap();
        // k_ψ = mass, so u ≡ 1 solves (K + M) u = M 1.
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn hilbertian_reproduces_constants_and_descends() {
        let (mesh, _, phi, _) = setup(12, |p| (p[0] - 0.5).hypot(p[1] - 0.5) - 0.23);
        let m = mass_matrix(&mesh).unwrap();
        let dj = m.matvec(&vec![2.5; mesh.num_vertices()]);
        for alpha in [0.0, 0.1, 1.0] {
            let g = hilbertian_extension(&dj, &mesh, alpha).unwrap();
            assert!(g.iter().all(|v| (v - 2.5).abs() < 1e-12));
        }
        let zero = hilbertian_extension(&vec![0.0; mesh.num_vertices()], &mesh, 0.2).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let dj1 = crate::analytic::exact_dj1(&mesh, &phi, |_| 1.0).unwrap();
        let ext = HilbertianExtension::new(&mesh, 2.0 / 12.0).unwrap();
        assert!(ext.matrix().asymmetry() < 1e-12);
        let g = ext.apply(&dj1).unwrap();
        assert!(dot(&g, &dj1) > 0.0);
    }

    #[test]
    fn velocity_examples() {
        let (mesh, _, _, _) = setup(5, |p| p[0]);
        let phi: Vec<f64> = mesh.vertices().iter().map(|p| p[0]).collect();
        let beta = compute_velocity(&mesh, &phi, &vec![1.0; phi.len()]);
        assert!(beta.iter().all(|b| (b[0] - 1.0).abs() < 1e-14 && b[1].abs() < 1e-14));
        let zero = compute_velocity(&mesh, &phi, &vec![0.0; phi.len()]);
        assert!(zero.iter().all(|b| b == &[0.0, 0.0]));
    }

    #[test]
    fn identity_system_returns_rhs() {
        let a = CsrMatrix::from_triplets(3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]).unwrap();
        assert_eq!(solve_direct(&a, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }
}

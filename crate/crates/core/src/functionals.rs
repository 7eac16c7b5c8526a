//! Volume, interface, flux and normal-dependent functionals on a cut domain,
//! and their derivatives with respect to nodal level-set values.
//!
//! Integrands are generic over [`Scalar`], so the same quadrature code returns
//! plain values, first derivatives ([`Dual1`]) or mixed second derivatives
//! ([`Dual2`]) depending on what the cut geometry was built from.
//!
//! ```
//! use cutform::functionals::{evaluate_levelset, Const, Volume};
//! use cutform::{build_structured_mesh, BBox, LevelSet};
//!
//! let mesh = build_structured_mesh(10, 10, BBox::unit()).unwrap();
//! let phi = LevelSet::from_fn(&mesh, |p| p[0] - 0.55).unwrap();
//! let area = evaluate_levelset(&Volume::inside(Const(1.0)), &mesh, &phi).unwrap();
//! assert!((area - 0.55).abs() < 1e-14);
//! ```

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::dual::{Dual1, Dual2, Scalar};
use crate::error::{Error, Result};
use crate::levelset::{build_cut, cut_cell, CellState, CutCell, CutTopology, LevelSet, Phase};
use crate::mesh::Mesh2D;
use crate::quadrature::Rule;

/// Scalar field `f(x)`. `cell` is the background cell the point lies in.
pub trait Integrand: Sync {
    fn eval<S: Scalar>(&self, cell: usize, x: [S; 2]) -> Result<S>;
}

/// Vector field `F(x)` for flux functionals.
pub trait VectorIntegrand: Sync {
    fn eval<S: Scalar>(&self, cell: usize, x: [S; 2]) -> Result<[S; 2]>;
}

/// Integrand `g(x, n)` depending on the interface normal.
pub trait NormalIntegrand: Sync {
    fn eval<S: Scalar>(&self, cell: usize, x: [S; 2], n: [S; 2]) -> Result<S>;
}

#[derive(Debug, Clone, Copy)]
pub struct Const(pub f64);

impl Integrand for Const {
    fn eval<S: Scalar>(&self, _: usize, _: [S; 2]) -> Result<S> {
        Ok(S::from_f64(self.0))
    }
}

/// `c + a·x + b·y`.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub c: f64,
    pub a: f64,
    pub b: f64,
}

impl Integrand for Affine {
    fn eval<S: Scalar>(&self, _: usize, x: [S; 2]) -> Result<S> {
        Ok(x[0] * self.a + x[1] * self.b + self.c)
    }
}

/// `F(x) = x`.
#[derive(Debug, Clone, Copy)]
pub struct Position;

impl VectorIntegrand for Position {
    fn eval<S: Scalar>(&self, _: usize, x: [S; 2]) -> Result<[S; 2]> {
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstVector(pub [f64; 2]);

impl VectorIntegrand for ConstVector {
    fn eval<S: Scalar>(&self, _: usize, _: [S; 2]) -> Result<[S; 2]> {
        Ok([S::from_f64(self.0[0]), S::from_f64(self.0[1])])
    }
}

/// What a functional sees of one background cell.
#[derive(Debug, Clone, Copy)]
pub enum CellGeom<'a, S> {
    Whole(Phase),
    Cut(&'a CutCell<S>),
}

/// A functional written as a sum of per-cell contributions.
pub trait Functional: Sync {
    fn cell<S: Scalar>(&self, mesh: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S>;
}

fn tag_cell<T>(c: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Integrand { .. } => e,
        other => Error::Integrand {
            cell: c,
            message: other.to_string(),
        },
    })
}

fn integrate_triangle<S: Scalar, I: Integrand>(
    f: &I,
    c: usize,
    points: [[S; 2]; 3],
    rule: Rule,
) -> Result<S> {
    let [p0, p1, p2] = points;
    let e1 = [p1[0] - p0[0], p1[1] - p0[1]];
    let e2 = [p2[0] - p0[0], p2[1] - p0[1]];
    let det = e1[0] * e2[1] - e2[0] * e1[1];
    let mut acc = S::zero();
    for &(xi, w) in rule.triangle() {
        let x = [
            p0[0] + e1[0] * xi[0] + e2[0] * xi[1],
            p0[1] + e1[1] * xi[0] + e2[1] * xi[1],
        ];
        acc += f.eval(c, x)? * w;
    }
    Ok(acc * det)
}

/// `∫ f dx` over one phase.
#[derive(Debug, Clone)]
pub struct Volume<I> {
    pub integrand: I,
    pub phase: Phase,
    pub rule: Rule,
}

impl<I: Integrand> Volume<I> {
    pub fn inside(integrand: I) -> Self {
        Self {
            integrand,
            phase: Phase::In,
            rule: Rule::Order2,
        }
    }

    pub fn outside(integrand: I) -> Self {
        Self {
            integrand,
            phase: Phase::Out,
            rule: Rule::Order2,
        }
    }
}

impl<I: Integrand> Functional for Volume<I> {
    fn cell<S: Scalar>(&self, mesh: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S> {
        tag_cell(
            c,
            match geom {
                CellGeom::Whole(p) if p == self.phase => {
                    let pts = mesh.cell_points(c).map(|q| [S::from_f64(q[0]), S::from_f64(q[1])]);
                    integrate_triangle(&self.integrand, c, pts, self.rule)
                }
                CellGeom::Whole(_) => Ok(S::zero()),
                CellGeom::Cut(cc) => {
                    let mut acc = S::zero();
                    for t in cc.sub.iter().filter(|t| t.phase == self.phase) {
                        acc += integrate_triangle(&self.integrand, c, t.points, self.rule)?;
                    }
                    Ok(acc)
                }
            },
        )
    }
}

fn integrate_interface<S: Scalar>(
    cc: &CutCell<S>,
    rule: Rule,
    mut f: impl FnMut([S; 2], [S; 2]) -> Result<S>,
) -> Result<S> {
    let seg = &cc.interface;
    let len = seg.length();
    let mut acc = S::zero();
    for &(s, w) in rule.segment() {
        acc += f(seg.at(s), seg.normal)? * w;
    }
    Ok(acc * len)
}

/// `∫_Γ f ds` over the interface.
#[derive(Debug, Clone)]
pub struct Boundary<I> {
    pub integrand: I,
    pub rule: Rule,
}

impl<I: Integrand> Boundary<I> {
    pub fn new(integrand: I) -> Self {
        Self {
            integrand,
            rule: Rule::Order2,
        }
    }
}

impl<I: Integrand> Functional for Boundary<I> {
    fn cell<S: Scalar>(&self, _: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S> {
        match geom {
            CellGeom::Whole(_) => Ok(S::zero()),
            CellGeom::Cut(cc) => tag_cell(
                c,
                integrate_interface(cc, self.rule, |x, _| self.integrand.eval(c, x)),
            ),
        }
    }
}

/// `∫_Γ F·n ds`.
#[derive(Debug, Clone)]
pub struct Flux<V> {
    pub field: V,
    pub rule: Rule,
}

impl<V: VectorIntegrand> Flux<V> {
    pub fn new(field: V) -> Self {
        Self {
            field,
            rule: Rule::Order2,
        }
    }
}

impl<V: VectorIntegrand> Functional for Flux<V> {
    fn cell<S: Scalar>(&self, _: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S> {
        match geom {
            CellGeom::Whole(_) => Ok(S::zero()),
            CellGeom::Cut(cc) => tag_cell(
                c,
                integrate_interface(cc, self.rule, |x, n| {
                    let v = self.field.eval(c, x)?;
                    Ok(v[0] * n[0] + v[1] * n[1])
                }),
            ),
        }
    }
}

/// `∫_Γ g(x, n) ds`.
#[derive(Debug, Clone)]
pub struct NormalFunctional<N> {
    pub integrand: N,
    pub rule: Rule,
}

impl<N: NormalIntegrand> NormalFunctional<N> {
    pub fn new(integrand: N) -> Self {
        Self {
            integrand,
            rule: Rule::Order2,
        }
    }
}

impl<N: NormalIntegrand> Functional for NormalFunctional<N> {
    fn cell<S: Scalar>(&self, _: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S> {
        match geom {
            CellGeom::Whole(_) => Ok(S::zero()),
            CellGeom::Cut(cc) => tag_cell(
                c,
                integrate_interface(cc, self.rule, |x, n| self.integrand.eval(c, x, n)),
            ),
        }
    }
}

/// Weighted sum `a·A + b·B` of two functionals.
#[derive(Debug, Clone)]
pub struct Combination<A, B> {
    pub a: A,
    pub wa: f64,
    pub b: B,
    pub wb: f64,
}

impl<A: Functional, B: Functional> Functional for Combination<A, B> {
    fn cell<S: Scalar>(&self, mesh: &Mesh2D, c: usize, geom: CellGeom<'_, S>) -> Result<S> {
        Ok(self.a.cell(mesh, c, geom)? * self.wa + self.b.cell(mesh, c, geom)? * self.wb)
    }
}

fn geom_of<S>(cut: &CutTopology<S>, c: usize) -> CellGeom<'_, S> {
    match (&cut.cells[c], cut.states[c]) {
        (Some(cc), _) => CellGeom::Cut(cc),
        (None, CellState::In) => CellGeom::Whole(Phase::In),
        _ => CellGeom::Whole(Phase::Out),
    }
}

/// Sum of all cell contributions, in cell order.
pub fn evaluate<F: Functional, S: Scalar>(f: &F, mesh: &Mesh2D, cut: &CutTopology<S>) -> Result<S> {
    let mut acc = S::zero();
    for c in 0..mesh.num_cells() {
        acc += f.cell(mesh, c, geom_of(cut, c))?;
    }
    Ok(acc)
}

pub fn evaluate_levelset<F: Functional>(f: &F, mesh: &Mesh2D, phi: &LevelSet) -> Result<f64> {
    evaluate(f, mesh, &build_cut(mesh, phi.values())?)
}

/// Nodes belonging to at least one cut cell, ascending.
pub fn cut_band(mesh: &Mesh2D, states: &[CellState]) -> Vec<usize> {
    let mut band = BTreeSet::new();
    for (c, t) in mesh.triangles().iter().enumerate() {
        if states[c] == CellState::Cut {
            band.extend(t.iter().copied());
        }
    }
    band.into_iter().collect()
}

fn local_values<S: Scalar>(mesh: &Mesh2D, c: usize, phi: &[f64], seed: impl Fn(usize, f64) -> S) -> [S; 3] {
    mesh.triangles()[c].map(|v| seed(v, phi[v]))
}

fn cut_local<S: Scalar>(mesh: &Mesh2D, c: usize, vals: &[S; 3]) -> Result<CutCell<S>> {
    crate::levelset::cut_triangle(mesh.cell_points(c), *vals)
}

/// `dJ(φ; w_i)` for every node `i`, by dual-number propagation through the
/// cells around each node. Entries outside the cut band are exactly zero.
pub fn ad_gradient<F: Functional>(f: &F, mesh: &Mesh2D, phi: &LevelSet) -> Result<Vec<f64>> {
    let values = phi.values();
    let states = crate::levelset::classify_cells(mesh, values)?;
    let band = cut_band(mesh, &states);
    let entries: Vec<(usize, f64)> = band
        .par_iter()
        .map(|&i| -> Result<(usize, f64)> {
            let mut d = 0.0;
            for &c in mesh.vertex_cells(i) {
                if states[c] != CellState::Cut {
                    continue;
                }
                let vals = local_values(mesh, c, values, |v, x| {
                    if v == i {
                        Dual1::variable(x)
                    } else {
                        Dual1::constant(x)
                    }
                });
                let cc = cut_local(mesh, c, &vals)?;
                d += f.cell(mesh, c, CellGeom::Cut(&cc))?.der;
            }
            Ok((i, d))
        })
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; mesh.num_vertices()];
    for (i, d) in entries {
        grad[i] = d;
    }
    Ok(grad)
}

/// AD gradient computed by re-cutting the whole mesh for every seed. Slow;
/// kept as a cross-check of the local assembly.
pub fn ad_gradient_global<F: Functional>(f: &F, mesh: &Mesh2D, phi: &LevelSet) -> Result<Vec<f64>> {
    (0..mesh.num_vertices())
        .map(|i| {
            let seeded = crate::dual::seed(phi.values(), i)?;
            Ok(evaluate(f, mesh, &build_cut(mesh, &seeded)?)?.der)
        })
        .collect()
}

/// Second derivatives `∂²J/∂φ_i∂φ_j` for `i, j` in `nodes`, dense in the
/// order given.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    pub nodes: Vec<usize>,
    pub data: Vec<f64>,
}

impl Hessian {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.nodes.len() + b]
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    /// `max |H - Hᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.nodes.len();
        let mut m = 0.0f64;
        for a in 0..n {
            for b in 0..a {
                m = m.max((self.get(a, b) - self.get(b, a)).abs());
            }
        }
        m
    }
}

pub fn ad_hessian<F: Functional>(f: &F, mesh: &Mesh2D, phi: &LevelSet, nodes: &[usize]) -> Result<Hessian> {
    let values = phi.values();
    let states = crate::levelset::classify_cells(mesh, values)?;
    let n = nodes.len();
    for &i in nodes {
        if i >= mesh.num_vertices() {
            return Err(Error::InvalidArgument(format!("node {i} out of range")));
        }
        if !mesh.vertex_cells(i).iter().any(|&c| states[c] == CellState::Cut) {
            return Err(Error::InvalidArgument(format!("node {i} is not adjacent to a cut cell")));
        }
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|a| -> Result<Vec<f64>> {
            let i = nodes[a];
            let mut row = vec![0.0; n];
            for (b, &j) in nodes.iter().enumerate() {
                let mut h = 0.0;
                for &c in mesh.vertex_cells(i) {
                    let t = mesh.triangles()[c];
                    if states[c] != CellState::Cut || !t.contains(&j) {
                        continue;
                    }
                    let vals = local_values(mesh, c, values, |v, x| {
                        Dual2::new(x, (v == i) as u8 as f64, (v == j) as u8 as f64, 0.0)
                    });
                    let cc = cut_local(mesh, c, &vals)?;
                    h += f.cell(mesh, c, CellGeom::Cut(&cc))?.d12;
                }
                row[b] = h;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(Hessian {
        nodes: nodes.to_vec(),
        data: rows.concat(),
    })
}

/// Central differences `(J(φ + t w_i) − J(φ − t w_i)) / 2t`.
///
/// Fails if moving any single node by `±t` changes the state of a cell
/// around it. Only the cells around node `i` change, so only those are
/// re-evaluated.
pub fn fd_gradient<F: Functional>(f: &F, mesh: &Mesh2D, phi: &LevelSet, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step}")));
    }
    let values = phi.values();
    let states = crate::levelset::classify_cells(mesh, values)?;
    (0..mesh.num_vertices())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let mut sides = [0.0; 2];
            for (k, s) in [step, -step].into_iter().enumerate() {
                for &c in mesh.vertex_cells(i) {
                    let vals = local_values(mesh, c, values, |v, x| if v == i { x + s } else { x });
                    if vals.iter().any(|&v| v == 0.0) {
                        return Err(flip_error(i, step));
                    }
                    let neg = vals.iter().filter(|&&v| v < 0.0).count();
                    let state = match neg {
                        3 => CellState::In,
                        0 => CellState::Out,
                        _ => CellState::Cut,
                    };
                    if state != states[c] {
                        return Err(flip_error(i, step));
                    }
                    let geom_cut;
                    let geom = match state {
                        CellState::Cut => {
                            geom_cut = cut_local(mesh, c, &vals)?;
                            CellGeom::Cut(&geom_cut)
                        }
                        CellState::In => CellGeom::Whole(Phase::In),
                        CellState::Out => CellGeom::Whole(Phase::Out),
                    };
                    sides[k] += f.cell(mesh, c, geom)?;
                }
            }
            Ok((sides[0] - sides[1]) / (2.0 * step))
        })
        .collect()
}

fn flip_error(node: usize, step: f64) -> Error {
    Error::AssumptionViolation(format!(
        "perturbing node {node} by ±{step:e} changes which cells are cut"
    ))
}

/// Value of `f` re-evaluated on one cell with the given local nodal values.
pub fn cell_value<F: Functional, S: Scalar>(f: &F, mesh: &Mesh2D, c: usize, values: &[S]) -> Result<S> {
    let t = mesh.triangles()[c];
    let local = [values[t[0]], values[t[1]], values[t[2]]];
    let neg = local.iter().filter(|v| v.re() < 0.0).count();
    match neg {
        3 => f.cell(mesh, c, CellGeom::Whole(Phase::In)),
        0 => f.cell(mesh, c, CellGeom::Whole(Phase::Out)),
        _ => {
            let cc = cut_cell(mesh, c, values)?;
            f.cell(mesh, c, CellGeom::Cut(&cc))
        }
    }
}

/// `max_i |a_i − b_i|`.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

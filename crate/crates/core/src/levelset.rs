//! Nodal level sets and the cut sub-triangulation they induce.
//!
//! The domain is `Ω = {φ < 0}`. A background triangle whose nodal values have
//! mixed signs is cut by a straight segment into one sub-triangle on the side
//! of its lone vertex and two on the other side. Intersection points are
//! linear interpolants of the nodal values evaluated in a generic [`Scalar`],
//! so derivatives of anything built from them come out of dual arithmetic.

use crate::dual::Scalar;
use crate::error::{Error, Result};
use crate::mesh::{basis_gradients, Mesh2D, Point};

/// Relative threshold below which nodal values are snapped away from zero.
pub const SNAP_TOLERANCE: f64 = 1e-10;

/// Which side of the interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    In,
    Out,
}

impl Phase {
    pub fn opposite(self) -> Self {
        match self {
            Phase::In => Phase::Out,
            Phase::Out => Phase::In,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellState {
    In,
    Out,
    Cut,
}

/// P1 level-set function: one value per mesh vertex, none of them zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    values: Vec<f64>,
}

impl LevelSet {
    /// Wrap nodal values, snapping any `|φ_i| < 1e-10 * max|φ|` to
    /// `±1e-10 * max|φ|` with its sign kept (exact zeros go negative).
    pub fn new(mesh: &Mesh2D, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::InvalidArgument(format!(
                "level set has {} values for {} vertices",
                values.len(),
                mesh.num_vertices()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("level-set value at node {i}")));
        }
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let floor = SNAP_TOLERANCE * scale;
        let mut snapped = 0;
        for v in values.iter_mut() {
            if v.abs() < floor {
                *v = if *v > 0.0 { floor } else { -floor };
                snapped += 1;
            }
        }
        if snapped > 0 {
            log::debug!("snapped {snapped} nodal level-set values away from zero");
        }
        Ok(Self { values })
    }

    /// Sample `f` at the mesh vertices.
    pub fn from_fn<F: Fn(Point) -> f64>(mesh: &Mesh2D, f: F) -> Result<Self> {
        Self::new(mesh, mesh.vertices().iter().map(|&p| f(p)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// `φ + t w_node` where `w_node` is the hat function of `node`.
pub fn perturb(phi: &LevelSet, node: usize, t: f64) -> Result<LevelSet> {
    if node >= phi.values.len() {
        return Err(Error::InvalidArgument(format!("node {node} out of range")));
    }
    let mut values = phi.values.clone();
    values[node] += t;
    if values[node] == 0.0 {
        return Err(Error::AssumptionViolation(format!(
            "perturbation makes node {node} lie on the interface"
        )));
    }
    Ok(LevelSet { values })
}

fn state_of(vals: [f64; 3]) -> Option<CellState> {
    if vals.iter().any(|&v| v == 0.0 || v.is_nan()) {
        return None;
    }
    let neg = vals.iter().filter(|&&v| v < 0.0).count();
    Some(match neg {
        3 => CellState::In,
        0 => CellState::Out,
        _ => CellState::Cut,
    })
}

/// IN if all three nodal values are negative, OUT if all positive, CUT otherwise.
pub fn classify_cells(mesh: &Mesh2D, values: &[f64]) -> Result<Vec<CellState>> {
    if values.len() != mesh.num_vertices() {
        return Err(Error::InvalidArgument("level set length does not match mesh".into()));
    }
    if let Some(i) = values.iter().position(|&v| v == 0.0) {
        return Err(Error::AssumptionViolation(format!(
            "node {i} at {:?} has a zero level-set value",
            mesh.vertices()[i]
        )));
    }
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(c, t)| {
            state_of([values[t[0]], values[t[1]], values[t[2]]]).ok_or_else(|| {
                Error::NonFinite(format!("level-set value on cell {c}"))
            })
        })
        .collect()
}

/// Straight interface piece inside a cut cell.
#[derive(Debug, Clone, Copy)]
pub struct Segment<S> {
    pub a: [S; 2],
    pub b: [S; 2],
    /// Unit normal `∇φ/|∇φ|` on the parent cell (pointing out of `Ω`).
    pub normal: [S; 2],
}

impl<S: Scalar> Segment<S> {
    pub fn length(&self) -> S {
        let dx = self.b[0] - self.a[0];
        let dy = self.b[1] - self.a[1];
        (dx * dx + dy * dy).sqrt()
    }

    /// Point at parameter `s ∈ [0, 1]`.
    pub fn at(&self, s: f64) -> [S; 2] {
        [
            self.a[0] + (self.b[0] - self.a[0]) * s,
            self.a[1] + (self.b[1] - self.a[1]) * s,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SubTriangle<S> {
    /// Counter-clockwise corners.
    pub points: [[S; 2]; 3],
    pub phase: Phase,
}

impl<S: Scalar> SubTriangle<S> {
    /// Jacobian determinant of the affine map from the reference triangle.
    pub fn jacobian_det(&self) -> S {
        let [p0, p1, p2] = self.points;
        (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
    }

    pub fn area(&self) -> S {
        self.jacobian_det() * 0.5
    }

    /// Affine map from reference coordinates `(ξ, η)`.
    pub fn map(&self, xi: [f64; 2]) -> [S; 2] {
        let [p0, p1, p2] = self.points;
        [
            p0[0] + (p1[0] - p0[0]) * xi[0] + (p2[0] - p0[0]) * xi[1],
            p0[1] + (p1[1] - p0[1]) * xi[0] + (p2[1] - p0[1]) * xi[1],
        ]
    }
}

/// Sub-triangulation of one cut background triangle.
#[derive(Debug, Clone)]
pub struct CutCell<S> {
    /// Local index of the vertex whose sign differs from the other two.
    pub lone: usize,
    /// `sub[0]` is on the lone vertex's side; `sub[1]` and `sub[2]` on the other.
    pub sub: [SubTriangle<S>; 3],
    /// `interface.a` lies on local edge `lone`, `interface.b` on local edge
    /// `lone + 2` (edge `k` joins local vertices `k` and `k + 1`).
    pub interface: Segment<S>,
}

impl<S: Scalar> CutCell<S> {
    pub fn phase_area(&self, phase: Phase) -> S {
        self.sub
            .iter()
            .filter(|t| t.phase == phase)
            .map(SubTriangle::area)
            .sum()
    }

    /// Local edges containing interface endpoints `a` and `b`.
    pub fn cut_edges(&self) -> [usize; 2] {
        [self.lone, (self.lone + 2) % 3]
    }
}

/// Split one triangle at the zero of the linear interpolant of `values`.
///
/// `corners` must be counter-clockwise; values need mixed signs.
pub fn cut_triangle<S: Scalar>(corners: [Point; 3], values: [S; 3]) -> Result<CutCell<S>> {
    let signs: Vec<bool> = values.iter().map(|v| v.re() < 0.0).collect();
    let neg = signs.iter().filter(|&&s| s).count();
    if neg == 0 || neg == 3 {
        return Err(Error::NotCut);
    }
    if values.iter().any(|v| v.re() == 0.0) {
        return Err(Error::AssumptionViolation(
            "zero nodal value on a cut cell".into(),
        ));
    }
    let lone_is_in = neg == 1;
    let lone = signs.iter().position(|&s| s == lone_is_in).unwrap_or(0);
    let (l, n, p) = (lone, (lone + 1) % 3, (lone + 2) % 3);

    let lift = |q: Point| [S::from_f64(q[0]), S::from_f64(q[1])];
    let interp = |from: usize, to: usize| -> [S; 2] {
        let (fa, fb) = (values[from].abs(), values[to].abs());
        let r = fa / (fa + fb);
        let q = corners[from];
        let d = [corners[to][0] - q[0], corners[to][1] - q[1]];
        [r * d[0] + q[0], r * d[1] + q[1]]
    };
    let v1 = interp(l, n);
    let v2 = interp(l, p);

    let lone_phase = if lone_is_in { Phase::In } else { Phase::Out };
    let other = lone_phase.opposite();
    let sub = [
        SubTriangle {
            points: [lift(corners[l]), v1, v2],
            phase: lone_phase,
        },
        SubTriangle {
            points: [v1, lift(corners[n]), lift(corners[p])],
            phase: other,
        },
        SubTriangle {
            points: [v1, lift(corners[p]), v2],
            phase: other,
        },
    ];

    let g = basis_gradients(&corners[0], &corners[1], &corners[2]);
    let grad = [
        values[0] * g[0][0] + values[1] * g[1][0] + values[2] * g[2][0],
        values[0] * g[0][1] + values[1] * g[1][1] + values[2] * g[2][1],
    ];
    let norm = (grad[0] * grad[0] + grad[1] * grad[1]).sqrt();
    let normal = [grad[0] / norm, grad[1] / norm];

    Ok(CutCell {
        lone,
        sub,
        interface: Segment { a: v1, b: v2, normal },
    })
}

/// Gradient of the P1 interpolant of `values` on a triangle.
pub fn p1_gradient<S: Scalar>(corners: &[Point; 3], values: [S; 3]) -> [S; 2] {
    let g = basis_gradients(&corners[0], &corners[1], &corners[2]);
    [
        values[0] * g[0][0] + values[1] * g[1][0] + values[2] * g[2][0],
        values[0] * g[0][1] + values[1] * g[1][1] + values[2] * g[2][1],
    ]
}

/// Cell classification plus the sub-triangulation of every cut cell.
#[derive(Debug, Clone)]
pub struct CutTopology<S> {
    pub states: Vec<CellState>,
    /// `Some` exactly for CUT cells.
    pub cells: Vec<Option<CutCell<S>>>,
}

impl<S: Scalar> CutTopology<S> {
    pub fn num_cells(&self) -> usize {
        self.states.len()
    }

    pub fn cut_cells(&self) -> impl Iterator<Item = (usize, &CutCell<S>)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(c, cell)| cell.as_ref().map(|cc| (c, cc)))
    }

    pub fn num_cut(&self) -> usize {
        self.states.iter().filter(|&&s| s == CellState::Cut).count()
    }

    /// Measure of the given phase (exact for the P1 interface).
    pub fn phase_area(&self, mesh: &Mesh2D, phase: Phase) -> S {
        let whole = match phase {
            Phase::In => CellState::In,
            Phase::Out => CellState::Out,
        };
        let mut total = S::zero();
        for (c, s) in self.states.iter().enumerate() {
            if *s == whole {
                total += S::from_f64(mesh.cell_area(c));
            } else if let Some(cc) = &self.cells[c] {
                total += cc.phase_area(phase);
            }
        }
        total
    }

    /// Phase of a whole (uncut) cell, `None` for cut cells.
    pub fn uncut_phase(&self, c: usize) -> Option<Phase> {
        match self.states[c] {
            CellState::In => Some(Phase::In),
            CellState::Out => Some(Phase::Out),
            CellState::Cut => None,
        }
    }
}

/// Cut every background cell. Classification uses primal values only.
pub fn build_cut<S: Scalar>(mesh: &Mesh2D, values: &[S]) -> Result<CutTopology<S>> {
    let primal: Vec<f64> = values.iter().map(Scalar::re).collect();
    let states = classify_cells(mesh, &primal)?;
    let cells = mesh
        .triangles()
        .iter()
        .enumerate()
        .map(|(c, t)| {
            if states[c] == CellState::Cut {
                cut_triangle(mesh.cell_points(c), [values[t[0]], values[t[1]], values[t[2]]])
                    .map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CutTopology { states, cells })
}

/// Cut a single background cell with per-vertex values looked up in `values`.
pub fn cut_cell<S: Scalar>(mesh: &Mesh2D, c: usize, values: &[S]) -> Result<CutCell<S>> {
    let t = mesh.triangles()[c];
    cut_triangle(mesh.cell_points(c), [values[t[0]], values[t[1]], values[t[2]]])
}

/// Findings of [`check_assumptions`]; both lists empty means the level set is
/// safe to differentiate at the probed step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssumptionReport {
    /// Nodes with `|φ_i| <= tol * max|φ|`.
    pub near_zero_nodes: Vec<usize>,
    /// Cells whose cut/uncut status changes when one incident node moves by
    /// `±t_probe`.
    pub unstable_cells: Vec<usize>,
}

impl AssumptionReport {
    pub fn is_clean(&self) -> bool {
        self.near_zero_nodes.is_empty() && self.unstable_cells.is_empty()
    }
}

pub const DEFAULT_NODE_TOLERANCE: f64 = 1e-10;

/// Probe the nodes-off-interface and stable-topology conditions without
/// modifying anything.
pub fn check_assumptions(mesh: &Mesh2D, values: &[f64], t_probe: f64, tol: f64) -> AssumptionReport {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let near_zero_nodes = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() <= tol * scale)
        .map(|(i, _)| i)
        .collect();

    let tris = mesh.triangles();
    let mut unstable = vec![false; tris.len()];
    for (c, t) in tris.iter().enumerate() {
        let base = [values[t[0]], values[t[1]], values[t[2]]];
        let base_state = state_of(base);
        let is_cut = |s: Option<CellState>| s.map(|s| s == CellState::Cut);
        'probe: for k in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut v = base;
                v[k] += sign * t_probe;
                let s = state_of(v);
                if s.is_none() || base_state.is_none() || is_cut(s) != is_cut(base_state) {
                    unstable[c] = true;
                    break 'probe;
                }
            }
        }
    }
    AssumptionReport {
        near_zero_nodes,
        unstable_cells: unstable
            .iter()
            .enumerate()
            .filter(|(_, &u)| u)
            .map(|(c, _)| c)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::Dual1;
    use crate::mesh::{build_structured_mesh, BBox};

    const TRI: [Point; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

    #[test]
    fn symmetric_midpoint_cut() {
        let cc = cut_triangle(TRI, [-1.0, 1.0, 1.0]).unwrap();
        assert_eq!(cc.interface.a, [0.5, 0.0]);
        assert_eq!(cc.interface.b, [0.0, 0.5]);
        assert_eq!(cc.sub[0].phase, Phase::In);
        assert!((cc.phase_area(Phase::In) - 0.125).abs() < 1e-16);
        assert!((cc.phase_area(Phase::Out) - 0.375).abs() < 1e-16);
    }

    #[test]
    fn asymmetric_cut_points() {
        let cc = cut_triangle(TRI, [-1.0, 3.0, 1.0]).unwrap();
        assert_eq!(cc.interface.a, [0.25, 0.0]);
        assert_eq!(cc.interface.b, [0.0, 0.5]);
    }

    #[test]
    fn intersection_carries_derivative() {
        // d/dφ1 of |φ1|/(|φ1|+|φ2|) at (-1, 1) with φ1 = -1 + ε:
        // |φ1| = 1 - ε, ratio (1-ε)/(2-ε) -> 1/2 - ε/4.
        let v = [Dual1::new(-1.0, 1.0), Dual1::constant(1.0), Dual1::constant(1.0)];
        let cc = cut_triangle(TRI, v).unwrap();
        assert_eq!(cc.interface.a[0].val, 0.5);
        assert!((cc.interface.a[0].der + 0.25).abs() < 1e-16);
    }

    #[test]
    fn interface_normal_points_outward() {
        let cc = cut_triangle(TRI, [-1.0, 3.0, 1.0]).unwrap();
        let g = p1_gradient(&TRI, [-1.0, 3.0, 1.0]);
        let n = cc.interface.normal;
        assert!(n[0] * g[0] + n[1] * g[1] > 0.0);
        // Agrees with the rotated segment direction up to sign.
        let s = cc.interface;
        let t = [s.b[0] - s.a[0], s.b[1] - s.a[1]];
        assert!((n[0] * t[0] + n[1] * t[1]).abs() < 1e-15);
    }

    #[test]
    fn lone_positive_vertex() {
        let cc = cut_triangle(TRI, [-1.0, 2.0, -1.0]).unwrap();
        assert_eq!(cc.lone, 1);
        assert_eq!(cc.sub[0].phase, Phase::Out);
        assert_eq!(cc.sub[1].phase, Phase::In);
        for t in &cc.sub {
            assert!(t.area() > 0.0);
        }
    }

    #[test]
    fn uncut_triangle_rejected() {
        assert!(matches!(cut_triangle(TRI, [1.0, 2.0, 3.0]), Err(Error::NotCut)));
        assert!(matches!(cut_triangle(TRI, [-1.0, -2.0, -3.0]), Err(Error::NotCut)));
    }

    #[test]
    fn classify_vertical_line() {
        let mesh = build_structured_mesh(10, 10, BBox::unit()).unwrap();
        let phi = LevelSet::from_fn(&mesh, |p| p[0] - 0.55).unwrap();
        let states = classify_cells(&mesh, phi.values()).unwrap();
        for c in 0..mesh.num_cells() {
            let xs = mesh.cell_points(c).map(|p| p[0]);
            let expected = if xs.iter().all(|&x| x < 0.55) {
                CellState::In
            } else if xs.iter().all(|&x| x > 0.55) {
                CellState::Out
            } else {
                CellState::Cut
            };
            assert_eq!(states[c], expected);
            let cx = mesh.cell_centroid(c)[0];
            if cx < 0.5 {
                assert_eq!(states[c], CellState::In);
            }
            if cx > 0.6 {
                assert_eq!(states[c], CellState::Out);
            }
        }
        assert_eq!(states.iter().filter(|&&s| s == CellState::Cut).count(), 20);
    }

    #[test]
    fn zero_node_is_reported() {
        let mesh = build_structured_mesh(4, 4, BBox::unit()).unwrap();
        let vals: Vec<f64> = mesh.vertices().iter().map(|p| p[0] - 0.5).collect();
        match classify_cells(&mesh, &vals) {
            Err(Error::AssumptionViolation(msg)) => assert!(msg.contains("node")),
            other => panic!("unexpected {other:?}"),
        }
        // Construction snaps instead.
        let phi = LevelSet::new(&mesh, vals).unwrap();
        assert!(phi.values().iter().all(|&v| v != 0.0));
        let snapped = phi.values()[2];
        assert_eq!(snapped, -1e-10 * 0.5);
    }

    #[test]
    fn all_in_has_no_cut_cells() {
        let mesh = build_structured_mesh(5, 5, BBox::unit()).unwrap();
        let phi = LevelSet::new(&mesh, vec![-1.0; mesh.num_vertices()]).unwrap();
        let cut = build_cut(&mesh, phi.values()).unwrap();
        assert_eq!(cut.num_cut(), 0);
        assert!((cut.phase_area(&mesh, Phase::In) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn planar_cut_area_is_exact() {
        let mesh = build_structured_mesh(10, 10, BBox::unit()).unwrap();
        let phi = LevelSet::from_fn(&mesh, |p| p[0] - 0.55).unwrap();
        let cut = build_cut(&mesh, phi.values()).unwrap();
        assert!((cut.phase_area(&mesh, Phase::In) - 0.55).abs() < 1e-14);
    }

    #[test]
    fn perturb_roundtrip() {
        let mesh = build_structured_mesh(3, 3, BBox::unit()).unwrap();
        let phi = LevelSet::from_fn(&mesh, |p| p[0] - 0.55).unwrap();
        assert_eq!(perturb(&phi, 4, 0.0).unwrap(), phi);
        let back = perturb(&perturb(&phi, 4, 0.25).unwrap(), 4, -0.25).unwrap();
        assert_eq!(back, phi);
        let v = phi.values()[1];
        assert!(matches!(perturb(&phi, 1, -v), Err(Error::AssumptionViolation(_))));
        assert!(perturb(&phi, 100, 0.1).is_err());
    }

    #[test]
    fn assumption_report() {
        let mesh = build_structured_mesh(10, 10, BBox::unit()).unwrap();
        let vals: Vec<f64> = mesh.vertices().iter().map(|p| p[0] - 0.5).collect();
        let rep = check_assumptions(&mesh, &vals, 1e-8, DEFAULT_NODE_TOLERANCE);
        assert_eq!(rep.near_zero_nodes.len(), 11);
        assert!(!rep.unstable_cells.is_empty());

        let vals: Vec<f64> = mesh.vertices().iter().map(|p| p[0] - 0.55).collect();
        assert!(check_assumptions(&mesh, &vals, 1e-8, DEFAULT_NODE_TOLERANCE).is_clean());

        let mut vals = vals;
        vals[17] = 1e-13;
        let rep = check_assumptions(&mesh, &vals, 1e-8, DEFAULT_NODE_TOLERANCE);
        assert_eq!(rep.near_zero_nodes, vec![17]);
    }
}

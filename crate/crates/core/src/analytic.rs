//! Closed-form directional derivatives for volume, interface and flux
//! functionals on the P1 cut geometry.
//!
//! These work on plain `f64` closures and never touch dual numbers, so they
//! serve as independent checks of [`crate::functionals::ad_gradient`].
//!
//! In 2D the interface is a polyline. Besides the integral over the interface
//! itself, [`exact_dj2`] picks up point terms wherever the polyline crosses a
//! mesh facet: the two cut cells sharing the facet each see their segment end
//! slide along it. On a facet of `∂D` only one cell contributes.

use crate::error::{Error, Result};
use crate::levelset::{build_cut, p1_gradient, CutCell, CutTopology, LevelSet};
use crate::mesh::{build_skeleton, FacetRef, Mesh2D, Point};
use crate::quadrature::SEGMENT_GAUSS3;

const DEGENERATE_SLOPE: f64 = 1e-14;

/// One cut cell's view of a facet crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingSide {
    pub cell: usize,
    /// Interface normal on this cell.
    pub normal: [f64; 2],
    /// Unit tangent of this cell's interface segment at the crossing,
    /// pointing out of the cell through the facet.
    pub conormal: [f64; 2],
}

/// Point where the interface crosses a mesh facet.
#[derive(Debug, Clone, PartialEq)]
pub struct FacetCrossing {
    pub point: Point,
    pub facet: FacetRef,
    /// Facet end vertices `[a, b]`.
    pub vertices: [usize; 2],
    /// Hat-function values of `a` and `b` at the crossing.
    pub weights: [f64; 2],
    /// Unit vector along the facet pointing out of `Ω` (towards larger φ).
    pub n_s: [f64; 2],
    /// `|∂φ/∂n_S|`, the slope of φ along the facet.
    pub slope: f64,
    /// One entry for boundary facets, two for interior ones.
    pub sides: Vec<CrossingSide>,
}

impl FacetCrossing {
    pub fn is_boundary(&self) -> bool {
        matches!(self.facet, FacetRef::Boundary(_))
    }
}

fn normalize(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

fn conormal_in(cc: &CutCell<f64>, local_edge: usize, p: Point) -> Result<[f64; 2]> {
    let [ea, eb] = cc.cut_edges();
    let other = if local_edge == ea {
        cc.interface.b
    } else if local_edge == eb {
        cc.interface.a
    } else {
        return Err(Error::Internal("facet crossing not on a cut edge".into()));
    };
    let d = [p[0] - other[0], p[1] - other[1]];
    if d[0].hypot(d[1]) == 0.0 {
        return Err(Error::Degenerate("interface segment of zero length".into()));
    }
    Ok(normalize(d))
}

/// All points where the interface meets a facet, interior facets first.
pub fn enumerate_crossings(mesh: &Mesh2D, cut: &CutTopology<f64>, values: &[f64]) -> Result<Vec<FacetCrossing>> {
    let skel = build_skeleton(mesh)?;
    let verts = mesh.vertices();
    let local_edge = |c: usize, fr: FacetRef| -> Result<usize> {
        skel.cell_facets[c]
            .iter()
            .position(|&f| f == fr)
            .ok_or_else(|| Error::Internal("facet missing from cell".into()))
    };
    let side = |c: usize, fr: FacetRef, p: Point| -> Result<CrossingSide> {
        let cc = cut.cells[c]
            .as_ref()
            .ok_or_else(|| Error::Internal(format!("cell {c} next to a crossing is not cut")))?;
        Ok(CrossingSide {
            cell: c,
            normal: cc.interface.normal,
            conormal: conormal_in(cc, local_edge(c, fr)?, p)?,
        })
    };
    let crossing = |[a, b]: [usize; 2], fr: FacetRef, cells: &[usize]| -> Result<Option<FacetCrossing>> {
        let (fa, fb) = (values[a], values[b]);
        if (fa < 0.0) == (fb < 0.0) {
            return Ok(None);
        }
        let (pa, pb) = (verts[a], verts[b]);
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        let slope = (fb - fa).abs() / len;
        if slope < DEGENERATE_SLOPE {
            return Err(Error::Degenerate(format!(
                "interface is tangent to facet ({a}, {b})"
            )));
        }
        let r = fa.abs() / (fa.abs() + fb.abs());
        let point = [pa[0] + r * (pb[0] - pa[0]), pa[1] + r * (pb[1] - pa[1])];
        let dir = [(pb[0] - pa[0]) / len, (pb[1] - pa[1]) / len];
        let n_s = if fb > fa { dir } else { [-dir[0], -dir[1]] };
        let sides = cells.iter().map(|&c| side(c, fr, point)).collect::<Result<_>>()?;
        Ok(Some(FacetCrossing {
            point,
            facet: fr,
            vertices: [a, b],
            weights: [1.0 - r, r],
            n_s,
            slope,
            sides,
        }))
    };

    let mut out = Vec::new();
    for (k, f) in skel.interior.iter().enumerate() {
        if let Some(x) = crossing(f.vertices, FacetRef::Interior(k), &[f.left, f.right])? {
            out.push(x);
        }
    }
    for (k, f) in skel.boundary.iter().enumerate() {
        if let Some(x) = crossing(f.vertices, FacetRef::Boundary(k), &[f.cell])? {
            out.push(x);
        }
    }
    Ok(out)
}

/// Runs `kernel(cell, x, n, w, |∇φ|)` at the interface quadrature points of
/// every cut cell, with `w` the three hat-function values at `x` and the
/// segment length folded into the weight.
fn interface_loop(
    mesh: &Mesh2D,
    cut: &CutTopology<f64>,
    values: &[f64],
    mut kernel: impl FnMut([usize; 3], Point, [f64; 2], [f64; 3], f64, f64),
) -> Result<()> {
    for (c, cc) in cut.cut_cells() {
        let t = mesh.triangles()[c];
        let pts = mesh.cell_points(c);
        let g = p1_gradient(&pts, [values[t[0]], values[t[1]], values[t[2]]]);
        let gn = g[0].hypot(g[1]);
        if gn < DEGENERATE_SLOPE {
            return Err(Error::Degenerate(format!("level-set gradient vanishes on cut cell {c}")));
        }
        let grads = mesh.cell_basis_gradients(c);
        let seg = &cc.interface;
        let len = seg.length();
        for &(s, wq) in &SEGMENT_GAUSS3 {
            let x = seg.at(s);
            let hat = [0, 1, 2].map(|j| {
                1.0 + grads[j][0] * (x[0] - pts[j][0]) + grads[j][1] * (x[1] - pts[j][1])
            });
            kernel(t, x, seg.normal, hat, gn, wq * len);
        }
    }
    Ok(())
}

fn prepare(mesh: &Mesh2D, phi: &LevelSet) -> Result<CutTopology<f64>> {
    build_cut(mesh, phi.values())
}

/// `dJ(φ; w_i) = −∫_Γ f w_i / |∇φ| ds` for `J = ∫_Ω f dx`.
pub fn exact_dj1(mesh: &Mesh2D, phi: &LevelSet, f: impl Fn(Point) -> f64) -> Result<Vec<f64>> {
    let cut = prepare(mesh, phi)?;
    let mut grad = vec![0.0; mesh.num_vertices()];
    interface_loop(mesh, &cut, phi.values(), |t, x, _, hat, gn, w| {
        let fx = f(x);
        for j in 0..3 {
            grad[t[j]] -= w * fx * hat[j] / gn;
        }
    })?;
    Ok(grad)
}

/// Whether the `∂D` crossings contribute to [`exact_dj2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTerm {
    Include,
    Omit,
}

/// Derivative of `J = ∫_Γ f ds`: the normal derivative of `f` along the
/// interface plus, at every facet crossing, `f` times the slide of each
/// segment end along the facet.
pub fn exact_dj2(
    mesh: &Mesh2D,
    phi: &LevelSet,
    f: impl Fn(Point) -> f64,
    grad_f: impl Fn(Point) -> [f64; 2],
    boundary: BoundaryTerm,
) -> Result<Vec<f64>> {
    let cut = prepare(mesh, phi)?;
    let values = phi.values();
    let mut grad = vec![0.0; mesh.num_vertices()];
    interface_loop(mesh, &cut, values, |t, x, n, hat, gn, w| {
        let g = grad_f(x);
        let dn = g[0] * n[0] + g[1] * n[1];
        for j in 0..3 {
            grad[t[j]] -= w * dn * hat[j] / gn;
        }
    })?;
    for x in enumerate_crossings(mesh, &cut, values)? {
        if x.is_boundary() && boundary == BoundaryTerm::Omit {
            continue;
        }
        let fp = f(x.point);
        let jump: f64 = x
            .sides
            .iter()
            .map(|s| fp * (x.n_s[0] * s.conormal[0] + x.n_s[1] * s.conormal[1]))
            .sum();
        for k in 0..2 {
            grad[x.vertices[k]] -= jump * x.weights[k] / x.slope;
        }
    }
    Ok(grad)
}

/// Result of [`exact_dj3`].
#[derive(Debug, Clone, PartialEq)]
pub struct FluxDerivative {
    pub gradient: Vec<f64>,
    pub boundary_crossings: usize,
    /// Set when the interface meets `∂D`.
    pub advisory: Option<String>,
}

/// Derivative of `J = ∫_Γ F·n ds`.
///
/// For a closed interface this is `−∫_Γ div F w_i / |∇φ| ds`. When the
/// interface ends on `∂D`, `J` equals `∫_Ω div F` minus the flux through the
/// part of `∂D` inside `Ω`, whose ends move with the crossings; passing
/// `field` adds those point terms, otherwise the result carries an advisory.
pub fn exact_dj3(
    mesh: &Mesh2D,
    phi: &LevelSet,
    div_f: impl Fn(Point) -> f64,
    field: Option<&dyn Fn(Point) -> [f64; 2]>,
) -> Result<FluxDerivative> {
    let cut = prepare(mesh, phi)?;
    let values = phi.values();
    let mut grad = vec![0.0; mesh.num_vertices()];
    interface_loop(mesh, &cut, values, |t, x, _, hat, gn, w| {
        let d = div_f(x);
        for j in 0..3 {
            grad[t[j]] -= w * d * hat[j] / gn;
        }
    })?;
    let skel = build_skeleton(mesh)?;
    let mut boundary_crossings = 0;
    for x in enumerate_crossings(mesh, &cut, values)? {
        let FacetRef::Boundary(k) = x.facet else {
            continue;
        };
        boundary_crossings += 1;
        if let Some(field) = field {
            let fv = field(x.point);
            let nd = skel.boundary[k].normal;
            let flux = fv[0] * nd[0] + fv[1] * nd[1];
            for j in 0..2 {
                grad[x.vertices[j]] += flux * x.weights[j] / x.slope;
            }
        }
    }
    let advisory = (boundary_crossings > 0).then(|| {
        if field.is_some() {
            format!("interface meets ∂D at {boundary_crossings} points; boundary-flux correction applied")
        } else {
            format!("interface meets ∂D at {boundary_crossings} points; result omits the boundary-flux terms")
        }
    });
    Ok(FluxDerivative {
        gradient: grad,
        boundary_crossings,
        advisory,
    })
}

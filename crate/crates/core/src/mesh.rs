//! Conforming triangle background meshes and their facet skeletons.
//!
//! A [`Mesh2D`] is immutable once built. Everything downstream (cutting,
//! assembly, graph construction) borrows it read-only, so a mesh can be
//! shared freely between threads.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: Point,
    pub max: Point,
}

impl BBox {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new([0.0, 0.0], [1.0, 1.0])
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }
}

/// Conforming triangulation of a 2D background domain.
#[derive(Debug, Clone)]
pub struct Mesh2D {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_facets: Vec<[usize; 2]>,
    /// Facet indices (into `boundary_facets`) per tag.
    tags: BTreeMap<String, Vec<usize>>,
    vertex_cells: Vec<Vec<usize>>,
}

impl Mesh2D {
    /// Build a mesh from raw connectivity. Triangles must be counter-clockwise
    /// with positive area; boundary facets are the edges used by exactly one
    /// triangle, oriented counter-clockwise around the domain.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let nv = vertices.len();
        for (c, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidArgument(format!(
                    "triangle {c} references a vertex out of range"
                )));
            }
            let area = signed_area(&vertices[tri[0]], &vertices[tri[1]], &vertices[tri[2]]);
            if !(area > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "triangle {c} has non-positive signed area {area}"
                )));
            }
        }

        let mut edge_use: HashMap<(usize, usize), (usize, [usize; 2])> = HashMap::new();
        let mut edge_order = Vec::new();
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let entry = edge_use.entry(key).or_insert_with(|| {
                    edge_order.push(key);
                    (0, [a, b])
                });
                entry.0 += 1;
            }
        }
        let mut boundary_facets = Vec::new();
        for key in edge_order {
            let (count, oriented) = edge_use[&key];
            match count {
                1 => boundary_facets.push(oriented),
                2 => {}
                n => {
                    return Err(Error::Topology(format!(
                        "edge ({}, {}) is shared by {n} triangles",
                        key.0, key.1
                    )))
                }
            }
        }

        let mut vertex_cells = vec![Vec::new(); nv];
        for (c, tri) in triangles.iter().enumerate() {
            for &v in tri {
                vertex_cells[v].push(c);
            }
        }

        Ok(Self {
            vertices,
            triangles,
            boundary_facets,
            tags: BTreeMap::new(),
            vertex_cells,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_facets(&self) -> &[[usize; 2]] {
        &self.boundary_facets
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.triangles.len()
    }

    /// Cells incident to vertex `v`.
    pub fn vertex_cells(&self, v: usize) -> &[usize] {
        &self.vertex_cells[v]
    }

    pub fn cell_points(&self, c: usize) -> [Point; 3] {
        let t = self.triangles[c];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn cell_area(&self, c: usize) -> f64 {
        let [a, b, p] = self.cell_points(c);
        signed_area(&a, &b, &p)
    }

    /// Longest edge of the cell.
    pub fn cell_diameter(&self, c: usize) -> f64 {
        let [a, b, p] = self.cell_points(c);
        dist(&a, &b).max(dist(&b, &p)).max(dist(&p, &a))
    }

    pub fn cell_centroid(&self, c: usize) -> Point {
        let [a, b, p] = self.cell_points(c);
        [(a[0] + b[0] + p[0]) / 3.0, (a[1] + b[1] + p[1]) / 3.0]
    }

    /// Gradients of the three barycentric (hat) functions on cell `c`.
    pub fn cell_basis_gradients(&self, c: usize) -> [[f64; 2]; 3] {
        let [a, b, p] = self.cell_points(c);
        basis_gradients(&a, &b, &p)
    }

    /// Maximum cell diameter.
    pub fn mesh_size(&self) -> f64 {
        (0..self.num_cells())
            .map(|c| self.cell_diameter(c))
            .fold(0.0, f64::max)
    }

    /// Smallest bounding box of the vertices.
    pub fn bbox(&self) -> BBox {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        BBox { min, max }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_area(c)).sum()
    }

    /// Tag every boundary facet whose endpoints both satisfy `pred`.
    pub fn tag_boundary<F: Fn(Point) -> bool>(&mut self, name: &str, pred: F) {
        let ids: Vec<usize> = self
            .boundary_facets
            .iter()
            .enumerate()
            .filter(|(_, f)| pred(self.vertices[f[0]]) && pred(self.vertices[f[1]]))
            .map(|(i, _)| i)
            .collect();
        self.tags.insert(name.to_string(), ids);
    }

    /// Boundary facet indices carrying `name`; empty if the tag is unknown.
    pub fn tagged(&self, name: &str) -> &[usize] {
        self.tags.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tag_names(&self) -> impl Iterator<Item = &str> {
        self.tags.keys().map(String::as_str)
    }

    /// Vertices lying on facets with the given tag, sorted and deduplicated.
    pub fn tagged_vertices(&self, name: &str) -> Vec<usize> {
        let mut vs: Vec<usize> = self
            .tagged(name)
            .iter()
            .flat_map(|&f| self.boundary_facets[f])
            .collect();
        vs.sort_unstable();
        vs.dedup();
        vs
    }
}

/// Structured `nx` by `ny` triangulation of `bbox`. Every quad is split along
/// its lower-left to upper-right diagonal, and the four sides are tagged
/// `left`, `right`, `bottom` and `top`.
pub fn build_structured_mesh(nx: usize, ny: usize, bbox: BBox) -> Result<Mesh2D> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("cell counts must be at least 1".into()));
    }
    if !(bbox.width() > 0.0 && bbox.height() > 0.0) || !bbox.area().is_finite() {
        return Err(Error::InvalidArgument(format!("degenerate bounding box {bbox:?}")));
    }
    let dx = bbox.width() / nx as f64;
    let dy = bbox.height() / ny as f64;
    let idx = |i: usize, j: usize| j * (nx + 1) + i;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // Pin the last row/column to the box to avoid drift in the tags.
            let x = if i == nx { bbox.max[0] } else { bbox.min[0] + i as f64 * dx };
            let y = if j == ny { bbox.max[1] } else { bbox.min[1] + j as f64 * dy };
            vertices.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (ll, lr, ur, ul) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([ll, lr, ur]);
            triangles.push([ll, ur, ul]);
        }
    }

    let mut mesh = Mesh2D::new(vertices, triangles)?;
    let tol = 1e-12 * bbox.diameter();
    let b = bbox;
    mesh.tag_boundary("left", |p| (p[0] - b.min[0]).abs() <= tol);
    mesh.tag_boundary("right", |p| (p[0] - b.max[0]).abs() <= tol);
    mesh.tag_boundary("bottom", |p| (p[1] - b.min[1]).abs() <= tol);
    mesh.tag_boundary("top", |p| (p[1] - b.max[1]).abs() <= tol);
    Ok(mesh)
}

/// Which facet sits on local edge `k` of a cell (edge from local vertex `k`
/// to `k + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetRef {
    Interior(usize),
    Boundary(usize),
}

#[derive(Debug, Clone)]
pub struct InteriorFacet {
    pub vertices: [usize; 2],
    pub left: usize,
    pub right: usize,
    /// Unit normal pointing from `left` into `right`.
    pub normal: [f64; 2],
    pub length: f64,
    /// Mean diameter of the two neighbouring cells.
    pub h: f64,
}

#[derive(Debug, Clone)]
pub struct BoundaryFacet {
    /// Counter-clockwise with respect to the owning cell.
    pub vertices: [usize; 2],
    pub cell: usize,
    /// Outward unit normal.
    pub normal: [f64; 2],
    pub length: f64,
    /// Index into [`Mesh2D::boundary_facets`].
    pub mesh_facet: usize,
}

/// Facet adjacency of a mesh.
#[derive(Debug, Clone)]
pub struct FacetSkeleton {
    pub interior: Vec<InteriorFacet>,
    pub boundary: Vec<BoundaryFacet>,
    /// `cell_facets[c][k]` is the facet on local edge `k` of cell `c`.
    pub cell_facets: Vec<[FacetRef; 3]>,
}

impl FacetSkeleton {
    pub fn num_edges(&self) -> usize {
        self.interior.len() + self.boundary.len()
    }

    /// The cell across local edge `k` of `c`, if any.
    pub fn neighbour(&self, c: usize, k: usize) -> Option<usize> {
        match self.cell_facets[c][k] {
            FacetRef::Interior(f) => {
                let facet = &self.interior[f];
                Some(if facet.left == c { facet.right } else { facet.left })
            }
            FacetRef::Boundary(_) => None,
        }
    }
}

pub fn build_skeleton(mesh: &Mesh2D) -> Result<FacetSkeleton> {
    let mut by_edge: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
    let mut order = Vec::new();
    for (c, tri) in mesh.triangles().iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            by_edge
                .entry(key)
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push((c, k));
        }
    }

    let mesh_boundary: HashMap<(usize, usize), usize> = mesh
        .boundary_facets()
        .iter()
        .enumerate()
        .map(|(i, f)| ((f[0].min(f[1]), f[0].max(f[1])), i))
        .collect();

    let placeholder = FacetRef::Boundary(usize::MAX);
    let mut cell_facets = vec![[placeholder; 3]; mesh.num_cells()];
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    let verts = mesh.vertices();

    for key in order {
        let uses = &by_edge[&key];
        match uses.as_slice() {
            &[(c, k)] => {
                let tri = mesh.triangles()[c];
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let (normal, length) = edge_normal(&verts[a], &verts[b]);
                let mesh_facet = *mesh_boundary.get(&key).ok_or_else(|| {
                    Error::Internal(format!("boundary edge {key:?} missing from mesh"))
                })?;
                cell_facets[c][k] = FacetRef::Boundary(boundary.len());
                boundary.push(BoundaryFacet {
                    vertices: [a, b],
                    cell: c,
                    normal,
                    length,
                    mesh_facet,
                });
            }
            &[(c0, k0), (c1, k1)] => {
                let tri = mesh.triangles()[c0];
                let (a, b) = (tri[k0], tri[(k0 + 1) % 3]);
                // Edge a->b is counter-clockwise in c0, so its outward normal
                // points into c1.
                let (normal, length) = edge_normal(&verts[a], &verts[b]);
                let h = 0.5 * (mesh.cell_diameter(c0) + mesh.cell_diameter(c1));
                let id = interior.len();
                cell_facets[c0][k0] = FacetRef::Interior(id);
                cell_facets[c1][k1] = FacetRef::Interior(id);
                interior.push(InteriorFacet {
                    vertices: [a, b],
                    left: c0,
                    right: c1,
                    normal,
                    length,
                    h,
                });
            }
            more => {
                return Err(Error::Topology(format!(
                    "non-manifold edge ({}, {}) with {} incident cells",
                    key.0,
                    key.1,
                    more.len()
                )))
            }
        }
    }

    Ok(FacetSkeleton {
        interior,
        boundary,
        cell_facets,
    })
}

pub(crate) fn signed_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: &Point, b: &Point) -> f64 {
    (b[0] - a[0]).hypot(b[1] - a[1])
}

/// Outward normal of a counter-clockwise edge `a -> b`, and its length.
fn edge_normal(a: &Point, b: &Point) -> ([f64; 2], f64) {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len = dx.hypot(dy);
    ([dy / len, -dx / len], len)
}

pub(crate) fn basis_gradients(a: &Point, b: &Point, c: &Point) -> [[f64; 2]; 3] {
    let two_area = 2.0 * signed_area(a, b, c);
    [
        [(b[1] - c[1]) / two_area, (c[0] - b[0]) / two_area],
        [(c[1] - a[1]) / two_area, (a[0] - c[0]) / two_area],
        [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_single_quad() {
        let m = build_structured_mesh(1, 1, BBox::unit()).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_cells(), 2);
        assert!((m.total_area() - 1.0).abs() < 1e-15);
        let s = build_skeleton(&m).unwrap();
        assert_eq!(s.interior.len(), 1);
        let f = &s.interior[0];
        let mut v = f.vertices;
        v.sort();
        assert_eq!(v, [0, 3]);
    }

    #[test]
    fn ten_by_ten_counts() {
        let m = build_structured_mesh(10, 10, BBox::unit()).unwrap();
        assert_eq!(m.num_cells(), 200);
        assert!((m.total_area() - 1.0).abs() <= 1e-14);
        let s = build_skeleton(&m).unwrap();
        assert_eq!(s.boundary.len(), 40);
        assert_eq!(s.interior.len(), (3 * 200 - 40) / 2);
        assert_eq!(s.interior.len(), 280);
        assert_eq!(s.num_edges(), (3 * 200 + 40) / 2);
    }

    #[test]
    fn rectangle_two_by_one() {
        let m = build_structured_mesh(2, 1, BBox::new([0.0, 0.0], [2.0, 1.0])).unwrap();
        assert_eq!(m.num_vertices(), 6);
        assert_eq!(m.num_cells(), 4);
        assert!((m.total_area() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_bbox_rejected() {
        let err = build_structured_mesh(2, 2, BBox::new([0.0, 0.0], [0.0, 1.0]));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        assert!(build_structured_mesh(0, 2, BBox::unit()).is_err());
    }

    #[test]
    fn single_triangle_has_no_interior_facets() {
        let m = Mesh2D::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let s = build_skeleton(&m).unwrap();
        assert!(s.interior.is_empty());
        assert_eq!(s.boundary.len(), 3);
    }

    #[test]
    fn clockwise_triangle_rejected() {
        let m = Mesh2D::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 2, 1]]);
        assert!(m.is_err());
        let m = Mesh2D::new(vec![[0.0, 0.0], [1.0, 0.0]], vec![[0, 1, 5]]);
        assert!(m.is_err());
    }

    #[test]
    fn non_manifold_edge_rejected() {
        let verts = vec![[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [0.6, 2.0]];
        // Three triangles on edge (0, 1): two above, one below.
        let tris = vec![[0, 1, 2], [0, 1, 4], [1, 0, 3]];
        let err = Mesh2D::new(verts, tris).unwrap_err();
        assert!(matches!(err, Error::Topology(_)));
    }

    #[test]
    fn normals_point_left_to_right() {
        let m = build_structured_mesh(6, 4, BBox::new([0.0, 0.0], [1.5, 1.0])).unwrap();
        let s = build_skeleton(&m).unwrap();
        for f in &s.interior {
            let (cl, cr) = (m.cell_centroid(f.left), m.cell_centroid(f.right));
            let d = [cr[0] - cl[0], cr[1] - cl[1]];
            assert!(f.normal[0] * d[0] + f.normal[1] * d[1] > 0.0);
            assert!((f.normal[0].hypot(f.normal[1]) - 1.0).abs() < 1e-15);
            assert!(f.length > 0.0 && f.h > 0.0);
        }
        for f in &s.boundary {
            let c = m.cell_centroid(f.cell);
            let p = m.vertices()[f.vertices[0]];
            assert!(f.normal[0] * (p[0] - c[0]) + f.normal[1] * (p[1] - c[1]) > 0.0);
        }
    }

    #[test]
    fn boundary_tags_cover_sides() {
        let m = build_structured_mesh(4, 3, BBox::unit()).unwrap();
        assert_eq!(m.tagged("left").len(), 3);
        assert_eq!(m.tagged("right").len(), 3);
        assert_eq!(m.tagged("bottom").len(), 4);
        assert_eq!(m.tagged("top").len(), 4);
        assert_eq!(m.tagged_vertices("left").len(), 4);
        assert!(m.tagged("nope").is_empty());
    }

    #[test]
    fn basis_gradients_sum_to_zero() {
        let m = build_structured_mesh(3, 2, BBox::unit()).unwrap();
        for c in 0..m.num_cells() {
            let g = m.cell_basis_gradients(c);
            for d in 0..2 {
                assert!((g[0][d] + g[1][d] + g[2][d]).abs() < 1e-12);
            }
        }
    }
}

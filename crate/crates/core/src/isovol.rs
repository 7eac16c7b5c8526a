//! Isolated-volume detection on the cut mesh.
//!
//! The cut mesh (sub-triangles of cut cells plus whole uncut cells) is turned
//! into a graph whose edges join cells sharing a face. Connected same-phase
//! regions are coloured by breadth-first search, either serially or over a
//! partition of the graph with an explicit exchange/gather/scatter step.
//! Regions that never reach a Dirichlet facet are reported as isolated.

use std::collections::{HashMap, HashSet, VecDeque};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::levelset::{CellState, CutTopology, Phase};
use crate::mesh::Mesh2D;

/// A corner of a cut-mesh cell: a background vertex or the interface point
/// on a background edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointKey {
    Vertex(usize),
    Edge(usize, usize),
}

impl PointKey {
    fn edge(a: usize, b: usize) -> Self {
        PointKey::Edge(a.min(b), a.max(b))
    }
}

/// Background edge containing both points, if any.
fn parent_edge(a: PointKey, b: PointKey) -> Option<(usize, usize)> {
    let sorted = |x: usize, y: usize| (x.min(y), x.max(y));
    match (a, b) {
        (PointKey::Vertex(x), PointKey::Vertex(y)) => Some(sorted(x, y)),
        (PointKey::Vertex(x), PointKey::Edge(p, q)) | (PointKey::Edge(p, q), PointKey::Vertex(x)) => {
            (x == p || x == q).then_some((p, q))
        }
        (PointKey::Edge(..), PointKey::Edge(..)) => None,
    }
}

/// Face-adjacency graph of the cut mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct CutGraph {
    adjacency: Vec<Vec<usize>>,
    states: Vec<Phase>,
    cell_of: Vec<usize>,
    /// Boundary facets (mesh indices) covered by an edge of each vertex.
    boundary: Vec<Vec<usize>>,
    cell_vertices: Vec<Vec<usize>>,
}

impl CutGraph {
    /// Graph given directly by its adjacency; each vertex is its own cell.
    pub fn from_adjacency(adjacency: Vec<Vec<usize>>, states: Vec<Phase>) -> Result<Self> {
        let n = adjacency.len();
        if states.len() != n {
            return Err(Error::InvalidArgument("one state per vertex required".into()));
        }
        for (v, nb) in adjacency.iter().enumerate() {
            for &w in nb {
                if w >= n || !adjacency[w].contains(&v) {
                    return Err(Error::InvalidArgument(format!("adjacency of {v} is not symmetric")));
                }
            }
        }
        Ok(Self {
            adjacency,
            states,
            cell_of: (0..n).collect(),
            boundary: vec![Vec::new(); n],
            cell_vertices: (0..n).map(|v| vec![v]).collect(),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbours(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn state(&self, v: usize) -> Phase {
        self.states[v]
    }

    pub fn states(&self) -> &[Phase] {
        &self.states
    }

    /// Background cell hosting vertex `v`.
    pub fn cell(&self, v: usize) -> usize {
        self.cell_of[v]
    }

    pub fn vertices_of_cell(&self, c: usize) -> &[usize] {
        &self.cell_vertices[c]
    }

    /// Mesh boundary facets touched along a full edge of `v`.
    pub fn boundary_facets(&self, v: usize) -> &[usize] {
        &self.boundary[v]
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Sub-graph on `keep` (global indices), with local numbering in the
    /// order given.
    fn induced(&self, keep: &[usize]) -> CutGraph {
        let local: HashMap<usize, usize> = keep.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let adjacency = keep
            .iter()
            .map(|&v| self.adjacency[v].iter().filter_map(|w| local.get(w).copied()).collect())
            .collect();
        let mut cell_vertices: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, &v) in keep.iter().enumerate() {
            cell_vertices.entry(self.cell_of[v]).or_default().push(i);
        }
        let ncell = self.cell_vertices.len();
        CutGraph {
            adjacency,
            states: keep.iter().map(|&v| self.states[v]).collect(),
            cell_of: keep.iter().map(|&v| self.cell_of[v]).collect(),
            boundary: keep.iter().map(|&v| self.boundary[v].clone()).collect(),
            cell_vertices: (0..ncell).map(|c| cell_vertices.remove(&c).unwrap_or_default()).collect(),
        }
    }
}

/// Build the conforming cut-mesh graph. In 2D, neighbouring cut cells split
/// their shared edge at the same point, so matching corner keys is enough.
pub fn build_cut_graph(mesh: &Mesh2D, cut: &CutTopology<f64>) -> Result<CutGraph> {
    if cut.states.len() != mesh.num_cells() {
        return Err(Error::InvalidArgument("cut topology does not match mesh".into()));
    }
    let mut keys: Vec<[PointKey; 3]> = Vec::new();
    let mut states = Vec::new();
    let mut cell_of = Vec::new();
    let mut cell_vertices = Vec::with_capacity(mesh.num_cells());
    for (c, t) in mesh.triangles().iter().enumerate() {
        let first = keys.len();
        match (&cut.cells[c], cut.states[c]) {
            (Some(cc), _) => {
                let (l, n, p) = (cc.lone, (cc.lone + 1) % 3, (cc.lone + 2) % 3);
                let v = |k: usize| PointKey::Vertex(t[k]);
                let v1 = PointKey::edge(t[l], t[n]);
                let v2 = PointKey::edge(t[l], t[p]);
                for (s, ks) in [[v(l), v1, v2], [v1, v(n), v(p)], [v1, v(p), v2]].into_iter().enumerate() {
                    keys.push(ks);
                    states.push(cc.sub[s].phase);
                    cell_of.push(c);
                }
            }
            (None, state) => {
                keys.push(t.map(PointKey::Vertex));
                states.push(if state == CellState::In { Phase::In } else { Phase::Out });
                cell_of.push(c);
            }
        }
        cell_vertices.push((first..keys.len()).collect::<Vec<_>>());
    }

    let mut owners: HashMap<(PointKey, PointKey), Vec<usize>> = HashMap::new();
    for (v, ks) in keys.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (ks[k], ks[(k + 1) % 3]);
            owners.entry((a.min(b), a.max(b))).or_default().push(v);
        }
    }
    let facet_index: HashMap<(usize, usize), usize> = mesh
        .boundary_facets()
        .iter()
        .enumerate()
        .map(|(i, f)| ((f[0].min(f[1]), f[0].max(f[1])), i))
        .collect();

    let n = keys.len();
    let mut adjacency = vec![Vec::new(); n];
    let mut boundary = vec![Vec::new(); n];
    let mut edges: Vec<_> = owners.into_iter().collect();
    edges.sort_unstable_by_key(|e| e.0);
    for ((a, b), vs) in edges {
        match vs.as_slice() {
            [v, w] => {
                adjacency[*v].push(*w);
                adjacency[*w].push(*v);
            }
            [v] => match parent_edge(a, b).and_then(|e| facet_index.get(&e)) {
                Some(&f) => boundary[*v].push(f),
                None => {
                    return Err(Error::Internal(format!(
                        "cut mesh is not conforming: edge {a:?}-{b:?} of cell {} has no neighbour",
                        cell_of[*v]
                    )))
                }
            },
            _ => {
                return Err(Error::Internal(format!(
                    "cut mesh is not conforming: edge {a:?}-{b:?} shared by {} cells",
                    vs.len()
                )))
            }
        }
    }
    for nb in &mut adjacency {
        nb.sort_unstable();
    }
    Ok(CutGraph {
        adjacency,
        states,
        cell_of,
        boundary,
        cell_vertices,
    })
}

/// Colour per graph vertex (from 1) and the phase of each colour.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Colouring {
    colours: Vec<usize>,
    states: Vec<Phase>,
}

impl Colouring {
    pub fn colour(&self, v: usize) -> usize {
        self.colours[v]
    }

    pub fn colours(&self) -> &[usize] {
        &self.colours
    }

    /// Phase of colour `c` (1-based).
    pub fn state_of(&self, c: usize) -> Phase {
        self.states[c - 1]
    }

    pub fn num_colours(&self) -> usize {
        self.states.len()
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.states.iter().filter(|&&s| s == phase).count()
    }
}

/// Breadth-first flood of colour `c` from `v0` through vertices sharing its
/// state.
pub fn colour_volume(v0: usize, c: usize, g: &CutGraph, colours: &mut [usize]) {
    let state = g.states[v0];
    colours[v0] = c;
    let mut queue = VecDeque::from([v0]);
    while let Some(v) = queue.pop_front() {
        for &w in &g.adjacency[v] {
            if colours[w] == 0 && g.states[w] == state {
                colours[w] = c;
                queue.push_back(w);
            }
        }
    }
}

/// Colour all connected same-state volumes, scanning vertices in order.
pub fn colour_graph(g: &CutGraph) -> Colouring {
    let mut colours = vec![0; g.num_vertices()];
    let mut states = Vec::new();
    for v in 0..g.num_vertices() {
        if colours[v] == 0 {
            states.push(g.states[v]);
            colour_volume(v, states.len(), g, &mut colours);
        }
    }
    Colouring { colours, states }
}

/// Portion of the graph stored by one part: owned vertices plus one layer of
/// ghosts owned elsewhere.
#[derive(Debug, Clone)]
pub struct LocalGraph {
    pub graph: CutGraph,
    /// Local to global vertex index.
    pub global: Vec<usize>,
    pub owned: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct PartitionedGraph {
    pub parts: Vec<LocalGraph>,
    /// Owning part of each global vertex.
    pub owner: Vec<usize>,
}

impl PartitionedGraph {
    /// Split by background cell: every graph vertex goes to the part of its
    /// cell.
    pub fn from_cell_partition(g: &CutGraph, cell_part: &[usize], nparts: usize) -> Result<Self> {
        if cell_part.len() != g.cell_vertices.len() {
            return Err(Error::InvalidArgument("one part per background cell required".into()));
        }
        if let Some(&p) = cell_part.iter().find(|&&p| p >= nparts) {
            return Err(Error::InvalidArgument(format!("part {p} out of range for {nparts} parts")));
        }
        let owner: Vec<usize> = (0..g.num_vertices()).map(|v| cell_part[g.cell_of[v]]).collect();
        let parts = (0..nparts)
            .map(|p| {
                let mut keep: Vec<usize> = (0..g.num_vertices()).filter(|&v| owner[v] == p).collect();
                let owned_count = keep.len();
                let ghosts: HashSet<usize> = keep
                    .iter()
                    .flat_map(|&v| g.adjacency[v].iter().copied())
                    .filter(|&w| owner[w] != p)
                    .collect();
                let mut ghosts: Vec<usize> = ghosts.into_iter().collect();
                ghosts.sort_unstable();
                keep.extend(ghosts);
                let mut owned = vec![true; owned_count];
                owned.resize(keep.len(), false);
                LocalGraph {
                    graph: g.induced(&keep),
                    global: keep,
                    owned,
                }
            })
            .collect();
        Ok(Self { parts, owner })
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }
}

/// Neighbour-to-neighbour message: the sender's local colour for each
/// vertex it owns that the receiver holds as a ghost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    /// `(global vertex, local colour at sender)`.
    pub entries: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct DistributedColouring {
    pub global: Colouring,
    /// Phase-1 colouring of each part.
    pub local: Vec<Colouring>,
    /// Global colour of each local colour, per part.
    pub local_to_global: Vec<Vec<usize>>,
    pub messages: Vec<Message>,
    /// Number of `(part, colour)` pairs gathered by the coordinator.
    pub gathered_pairs: usize,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Two-phase colouring over a partitioned graph. Global colours are numbered
/// by the smallest global vertex they contain, which matches the numbering of
/// [`colour_graph`] on the whole graph.
pub fn colour_distributed(pg: &PartitionedGraph) -> Result<DistributedColouring> {
    let np = pg.num_parts();
    let local: Vec<Colouring> = pg.parts.par_iter().map(|p| colour_graph(&p.graph)).collect();

    // Exchange: each owner tells the parts holding ghosts of its vertices
    // which local colour it gave them.
    let mut outbox: Vec<HashMap<usize, Vec<(usize, usize)>>> = vec![HashMap::new(); np];
    for (p, part) in pg.parts.iter().enumerate() {
        for (i, &gv) in part.global.iter().enumerate() {
            if !part.owned[i] {
                let q = pg.owner[gv];
                outbox[q].entry(p).or_default().push((gv, 0));
            }
        }
    }
    let index: Vec<HashMap<usize, usize>> = pg
        .parts
        .iter()
        .map(|part| part.global.iter().enumerate().map(|(i, &g)| (g, i)).collect())
        .collect();
    let mut messages = Vec::new();
    for (q, boxes) in outbox.into_iter().enumerate() {
        let mut targets: Vec<_> = boxes.into_iter().collect();
        targets.sort_unstable_by_key(|t| t.0);
        for (p, mut entries) in targets {
            for e in &mut entries {
                let i = *index[q].get(&e.0).ok_or_else(|| {
                    Error::Partition(format!("vertex {} is not stored by its owner {q}", e.0))
                })?;
                e.1 = local[q].colour(i);
            }
            messages.push(Message { from: q, to: p, entries });
        }
    }

    // Each receiver pairs its colour of the ghost with the owner's colour.
    let offsets: Vec<usize> = local
        .iter()
        .scan(0, |acc, c| {
            let o = *acc;
            *acc += c.num_colours();
            Some(o)
        })
        .collect();
    let total = offsets.last().map_or(0, |o| o + local[np - 1].num_colours());
    let mut pairs = Vec::new();
    for m in &messages {
        for &(gv, cq) in &m.entries {
            let i = index[m.to][&gv];
            let cp = local[m.to].colour(i);
            if local[m.to].state_of(cp) != local[m.from].state_of(cq) {
                return Err(Error::Partition(format!(
                    "vertex {gv} has state {:?} on part {} but {:?} on its owner {}",
                    local[m.to].state_of(cp),
                    m.to,
                    local[m.from].state_of(cq),
                    m.from
                )));
            }
            pairs.push((offsets[m.to] + cp - 1, offsets[m.from] + cq - 1));
        }
    }

    // Gather on the coordinator and number the merged colours.
    let mut uf = UnionFind::new(total);
    for &(a, b) in &pairs {
        uf.union(a, b);
    }
    let mut first_vertex = vec![usize::MAX; total];
    for (p, part) in pg.parts.iter().enumerate() {
        for (i, &gv) in part.global.iter().enumerate() {
            if part.owned[i] {
                let r = uf.find(offsets[p] + local[p].colour(i) - 1);
                first_vertex[r] = first_vertex[r].min(gv);
            }
        }
    }
    let mut roots: Vec<usize> = (0..total).filter(|&k| uf.find(k) == k && first_vertex[k] != usize::MAX).collect();
    roots.sort_unstable_by_key(|&r| first_vertex[r]);
    let mut id = vec![0; total];
    for (k, &r) in roots.iter().enumerate() {
        id[r] = k + 1;
    }

    // Scatter back.
    let local_to_global: Vec<Vec<usize>> = (0..np)
        .map(|p| (0..local[p].num_colours()).map(|c| id[uf.find(offsets[p] + c)]).collect())
        .collect();
    let mut colours = vec![0; pg.owner.len()];
    let mut states = vec![Phase::In; roots.len()];
    for (p, part) in pg.parts.iter().enumerate() {
        for (i, &gv) in part.global.iter().enumerate() {
            if part.owned[i] {
                let lc = local[p].colour(i);
                let g = local_to_global[p][lc - 1];
                colours[gv] = g;
                states[g - 1] = local[p].state_of(lc);
            }
        }
    }
    if let Some(v) = colours.iter().position(|&c| c == 0) {
        return Err(Error::Partition(format!("vertex {v} is not owned by any part")));
    }
    Ok(DistributedColouring {
        global: Colouring { colours, states },
        local,
        local_to_global,
        messages,
        gathered_pairs: pairs.len(),
    })
}

/// Per background cell: its `phase` part lies in a volume that touches none
/// of the `dirichlet` boundary facets.
pub fn mark_isolated(colouring: &Colouring, g: &CutGraph, dirichlet: &[usize], phase: Phase) -> Vec<bool> {
    let dirichlet: HashSet<usize> = dirichlet.iter().copied().collect();
    let mut anchored = vec![false; colouring.num_colours() + 1];
    for v in 0..g.num_vertices() {
        if g.boundary[v].iter().any(|f| dirichlet.contains(f)) {
            anchored[colouring.colour(v)] = true;
        }
    }
    g.cell_vertices
        .iter()
        .map(|vs| {
            vs.iter()
                .any(|&v| g.states[v] == phase && !anchored[colouring.colour(v)])
        })
        .collect()
}

/// Graph, colouring and indicator in one call, with Dirichlet facets given by
/// boundary tags.
pub fn isolated_cells(mesh: &Mesh2D, cut: &CutTopology<f64>, dirichlet_tags: &[&str], phase: Phase) -> Result<Vec<bool>> {
    let g = build_cut_graph(mesh, cut)?;
    let colouring = colour_graph(&g);
    let mut facets = Vec::new();
    for tag in dirichlet_tags {
        let t = mesh.tagged(tag);
        if t.is_empty() {
            return Err(Error::InvalidArgument(format!("boundary tag '{tag}' is empty or unknown")));
        }
        facets.extend_from_slice(t);
    }
    Ok(mark_isolated(&colouring, &g, &facets, phase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::build_cut;
    use crate::mesh::{build_structured_mesh, BBox};

    fn graph_for(n: usize, f: impl Fn([f64; 2]) -> f64) -> (Mesh2D, CutGraph) {
        let mesh = build_structured_mesh(n, n, BBox::unit()).unwrap();
        let phi = crate::LevelSet::from_fn(&mesh, f).unwrap();
        let cut = build_cut(&mesh, phi.values()).unwrap();
        let g = build_cut_graph(&mesh, &cut).unwrap();
        (mesh, g)
    }

    #[test]
    fn all_in_matches_cell_adjacency() {
        let (mesh, g) = graph_for(6, |_| -1.0);
        assert_eq!(g.num_vertices(), mesh.num_cells());
        // 3 interior edges per cell counted twice, minus the boundary.
        let interior = (3 * mesh.num_cells() - mesh.boundary_facets().len()) / 2;
        assert_eq!(g.num_edges(), interior);
        let col = colour_graph(&g);
        assert_eq!(col.num_colours(), 1);
        assert_eq!(col.state_of(1), Phase::In);
    }

    #[test]
    fn planar_cut_gives_two_colours() {
        let (_, g) = graph_for(10, |p| p[0] - 0.55);
        let col = colour_graph(&g);
        assert_eq!(col.num_colours(), 2);
        assert_eq!(col.count(Phase::In), 1);
        for v in 0..g.num_vertices() {
            for &w in g.neighbours(v) {
                if g.state(v) == g.state(w) {
                    assert_eq!(col.colour(v), col.colour(w));
                }
            }
        }
    }

    #[test]
    fn two_circles() {
        let (_, g) = graph_for(32, |p| {
            let a = (p[0] - 0.3).hypot(p[1] - 0.3) - 0.15;
            let b = (p[0] - 0.7).hypot(p[1] - 0.65) - 0.15;
            a.min(b)
        });
        let col = colour_graph(&g);
        assert_eq!(col.count(Phase::In), 2);
        assert_eq!(col.count(Phase::Out), 1);
    }

    fn path(states: &[Phase]) -> CutGraph {
        let n = states.len();
        let adj = (0..n)
            .map(|i| {
                let mut v = Vec::new();
                if i > 0 {
                    v.push(i - 1);
                }
                if i + 1 < n {
                    v.push(i + 1);
                }
                v
            })
            .collect();
        CutGraph::from_adjacency(adj, states.to_vec()).unwrap()
    }

    #[test]
    fn colour_volume_on_paths() {
        use Phase::{In, Out};
        let g = CutGraph::from_adjacency(vec![vec![]], vec![In]).unwrap();
        let mut c = vec![0];
        colour_volume(0, 1, &g, &mut c);
        assert_eq!(c, [1]);

        let g = path(&[In; 5]);
        let mut c = vec![0; 5];
        colour_volume(2, 1, &g, &mut c);
        assert_eq!(c, [1; 5]);

        let g = path(&[Out, In, In, Out, In]);
        let mut c = vec![0; 5];
        colour_volume(1, 7, &g, &mut c);
        assert_eq!(c, [0, 7, 7, 0, 0]);
        assert_eq!(colour_graph(&g).colours(), &[1, 2, 2, 3, 4]);
    }

    #[test]
    fn asymmetric_adjacency_rejected() {
        assert!(CutGraph::from_adjacency(vec![vec![1], vec![]], vec![Phase::In; 2]).is_err());
    }

    #[test]
    fn single_part_matches_serial() {
        let (mesh, g) = graph_for(12, |p| (p[0] - 0.5).hypot(p[1] - 0.5) - 0.3);
        let pg = PartitionedGraph::from_cell_partition(&g, &vec![0; mesh.num_cells()], 1).unwrap();
        let d = colour_distributed(&pg).unwrap();
        assert_eq!(d.global, colour_graph(&g));
        assert!(d.messages.is_empty());
    }

    #[test]
    fn inconsistent_ghost_state_rejected() {
        let (mesh, g) = graph_for(8, |p| p[0] - 0.55);
        let parts: Vec<usize> = (0..mesh.num_cells()).map(|c| (mesh.cell_centroid(c)[1] > 0.5) as usize).collect();
        let mut pg = PartitionedGraph::from_cell_partition(&g, &parts, 2).unwrap();
        let ghost = pg.parts[0].owned.iter().position(|o| !o).unwrap();
        let s = pg.parts[0].graph.states[ghost];
        pg.parts[0].graph.states[ghost] = s.opposite();
        assert!(matches!(colour_distributed(&pg), Err(Error::Partition(_))));
    }

    #[test]
    fn anchored_body_has_no_isolated_cells() {
        let (mesh, g) = graph_for(10, |p| p[0] - 0.55);
        let col = colour_graph(&g);
        let psi = mark_isolated(&col, &g, mesh.tagged("left"), Phase::In);
        assert!(psi.iter().all(|&b| !b));
    }

    #[test]
    fn single_cell_gap_is_resolved() {
        // IN strips on both sides of the column x = 0.45; the OUT gap is
        // narrower than one cell.
        let (mesh, g) = graph_for(20, |p| 0.03 - (p[0] - 0.45).abs());
        let col = colour_graph(&g);
        assert_eq!(col.count(Phase::In), 2);
        let psi = mark_isolated(&col, &g, mesh.tagged("left"), Phase::In);
        for c in 0..mesh.num_cells() {
            let x = mesh.cell_centroid(c)[0];
            assert_eq!(psi[c], x > 0.45, "cell {c} at x = {x}");
        }
    }

    #[test]
    fn floating_blob_marked() {
        let (mesh, g) = graph_for(20, |p| {
            let body = p[0] - 0.3;
            let blob = (p[0] - 0.7).hypot(p[1] - 0.5) - 0.12;
            body.min(blob)
        });
        let col = colour_graph(&g);
        let psi = mark_isolated(&col, &g, mesh.tagged("left"), Phase::In);
        for c in 0..mesh.num_cells() {
            let q = mesh.cell_centroid(c);
            let near_blob = (q[0] - 0.7).hypot(q[1] - 0.5) < 0.12 + mesh.mesh_size();
            if psi[c] {
                assert!(near_blob);
            }
            if (q[0] - 0.7).hypot(q[1] - 0.5) < 0.08 {
                assert!(psi[c]);
            }
        }
    }

    #[test]
    fn body_away_from_dirichlet_is_isolated() {
        let (mesh, g) = graph_for(10, |p| p[0] - 0.25);
        let col = colour_graph(&g);
        let psi = mark_isolated(&col, &g, mesh.tagged("right"), Phase::In);
        assert!(psi.iter().enumerate().all(|(c, &b)| b == (mesh.cell_centroid(c)[0] < 0.3)));
    }
}

//! Periodic lattice graphs on a finite cell window, and their finite modifications.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

pub const SQRT3: f64 = 1.732_050_807_568_877_2;

/// A lattice vertex `p_j + v(n)`. Ordering is lexicographic on `(n1, n2, j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId {
    pub n1: i32,
    pub n2: i32,
    /// Sublattice index, 1-based.
    pub sub: u8,
}

impl VertexId {
    pub const fn new(sub: u8, n1: i32, n2: i32) -> Self {
        VertexId { n1, n2, sub }
    }

    pub fn shifted(self, d1: i32, d2: i32) -> Self {
        VertexId { n1: self.n1 + d1, n2: self.n2 + d2, sub: self.sub }
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{}]", self.sub, self.n1, self.n2)
    }
}

impl Serialize for VertexId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.sub as i32, self.n1, self.n2].serialize(s)
    }
}

impl<'de> Deserialize<'de> for VertexId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [j, n1, n2] = <[i32; 3]>::deserialize(d)?;
        if !(1..=255).contains(&j) {
            return Err(serde::de::Error::custom(format!("sublattice index {j} out of range")));
        }
        Ok(VertexId::new(j as u8, n1, n2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Hexagonal,
    Square,
    Triangular,
    Custom,
}

impl LatticeKind {
    pub fn sublattices(self) -> u8 {
        match self {
            LatticeKind::Hexagonal => 2,
            _ => 1,
        }
    }

    pub fn basis(self) -> [[f64; 2]; 2] {
        match self {
            LatticeKind::Hexagonal => [[1.5, SQRT3 / 2.0], [0.0, SQRT3]],
            LatticeKind::Triangular => [[1.0, 0.0], [0.5, SQRT3 / 2.0]],
            _ => [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    /// Sublattice offsets `p_j`; hexagonal uses `p_1 = ω^5`, `p_2 = 1` with `ω = e^{iπ/3}`.
    pub fn offsets(self) -> Vec<[f64; 2]> {
        match self {
            LatticeKind::Hexagonal => vec![[0.5, -SQRT3 / 2.0], [1.0, 0.0]],
            _ => vec![[0.0, 0.0]],
        }
    }

    /// Cell shifts `m` and target sublattice for every edge leaving sublattice `sub`.
    pub fn edge_rules(self, sub: u8) -> Result<Vec<(u8, i32, i32)>> {
        Ok(match (self, sub) {
            (LatticeKind::Hexagonal, 1) => vec![(2, 0, 0), (2, -1, 0), (2, 0, -1)],
            (LatticeKind::Hexagonal, 2) => vec![(1, 0, 0), (1, 1, 0), (1, 0, 1)],
            (LatticeKind::Square, 1) => vec![(1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1)],
            (LatticeKind::Triangular, 1) => {
                vec![(1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (1, 1, -1), (1, -1, 1)]
            }
            (kind, sub) => return Err(Error::UnsupportedKind(format!("{kind:?} sublattice {sub}"))),
        })
    }

    pub fn lattice_neighbors(self, v: VertexId) -> Result<Vec<VertexId>> {
        Ok(self
            .edge_rules(v.sub)?
            .into_iter()
            .map(|(sub, d1, d2)| VertexId::new(sub, v.n1 + d1, v.n2 + d2))
            .collect())
    }

    pub fn position(self, v: VertexId) -> [f64; 2] {
        let [b1, b2] = self.basis();
        let offsets = self.offsets();
        let p = offsets[(v.sub as usize - 1).min(offsets.len() - 1)];
        let (n1, n2) = (v.n1 as f64, v.n2 as f64);
        [p[0] + n1 * b1[0] + n2 * b2[0], p[1] + n1 * b1[1] + n2 * b2[1]]
    }
}

/// Inclusive rectangular range of cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellWindow {
    pub n1: (i32, i32),
    pub n2: (i32, i32),
}

impl CellWindow {
    pub fn new(n1: (i32, i32), n2: (i32, i32)) -> Self {
        CellWindow { n1, n2 }
    }

    /// Window centered on the origin cell with `radius` cells on each side.
    pub fn centered(radius: i32) -> Self {
        CellWindow { n1: (-radius, radius), n2: (-radius, radius) }
    }

    pub fn is_empty(&self) -> bool {
        self.n1.0 > self.n1.1 || self.n2.0 > self.n2.1
    }

    pub fn contains_cell(&self, n1: i32, n2: i32) -> bool {
        (self.n1.0..=self.n1.1).contains(&n1) && (self.n2.0..=self.n2.1).contains(&n2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeGraph {
    kind: LatticeKind,
    window: Option<CellWindow>,
    adj: BTreeMap<VertexId, BTreeSet<VertexId>>,
    degree: BTreeMap<VertexId, usize>,
    /// Vertices whose lattice neighborhood was cut by the finite window.
    border: BTreeSet<VertexId>,
    deleted_edges: Vec<(VertexId, VertexId)>,
    deleted_vertices: Vec<VertexId>,
}

/// Result of a deletion: the new graph plus vertices that became isolated and were dropped.
#[derive(Clone, Debug)]
pub struct Modified {
    pub graph: LatticeGraph,
    pub isolated: Vec<VertexId>,
}

pub fn build_lattice(kind: LatticeKind, window: CellWindow) -> Result<LatticeGraph> {
    if kind == LatticeKind::Custom {
        return Err(Error::UnsupportedKind("custom graphs have no generator".into()));
    }
    if window.is_empty() {
        return Err(Error::Empty("cell window"));
    }
    let mut vertices = BTreeSet::new();
    for n1 in window.n1.0..=window.n1.1 {
        for n2 in window.n2.0..=window.n2.1 {
            for sub in 1..=kind.sublattices() {
                vertices.insert(VertexId::new(sub, n1, n2));
            }
        }
    }
    let mut g = LatticeGraph::induced(kind, &vertices)?;
    g.window = Some(window);
    Ok(g)
}

impl LatticeGraph {
    /// Subgraph of the infinite periodic lattice induced on `vertices`.
    pub fn induced(kind: LatticeKind, vertices: &BTreeSet<VertexId>) -> Result<Self> {
        let mut adj: BTreeMap<VertexId, BTreeSet<VertexId>> = BTreeMap::new();
        let mut border = BTreeSet::new();
        for &v in vertices {
            let mut nbrs = BTreeSet::new();
            for w in kind.lattice_neighbors(v)? {
                if vertices.contains(&w) {
                    nbrs.insert(w);
                } else {
                    border.insert(v);
                }
            }
            adj.insert(v, nbrs);
        }
        let degree = adj.iter().map(|(v, n)| (*v, n.len())).collect();
        Ok(LatticeGraph {
            kind,
            window: None,
            adj,
            degree,
            border,
            deleted_edges: Vec::new(),
            deleted_vertices: Vec::new(),
        })
    }

    /// Arbitrary simple graph; self-loops and repeated edges are rejected.
    pub fn custom(vertices: &[VertexId], edges: &[(VertexId, VertexId)]) -> Result<Self> {
        let mut adj: BTreeMap<VertexId, BTreeSet<VertexId>> =
            vertices.iter().map(|&v| (v, BTreeSet::new())).collect();
        for &(a, b) in edges {
            if a == b {
                return Err(Error::Geometry(format!("self-loop at {a}")));
            }
            for v in [a, b] {
                if !adj.contains_key(&v) {
                    return Err(Error::MissingVertex(v));
                }
            }
            if !adj.get_mut(&a).unwrap().insert(b) {
                return Err(Error::Geometry(format!("repeated edge {a}-{b}")));
            }
            adj.get_mut(&b).unwrap().insert(a);
        }
        let degree = adj.iter().map(|(v, n)| (*v, n.len())).collect();
        Ok(LatticeGraph {
            kind: LatticeKind::Custom,
            window: None,
            adj,
            degree,
            border: BTreeSet::new(),
            deleted_edges: Vec::new(),
            deleted_vertices: Vec::new(),
        })
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn window(&self) -> Option<CellWindow> {
        self.window
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(|n| n.len()).sum::<usize>() / 2
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.adj.contains_key(&v)
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.adj.keys().copied()
    }

    pub fn neighbors(&self, v: VertexId) -> Result<&BTreeSet<VertexId>> {
        self.adj.get(&v).ok_or(Error::MissingVertex(v))
    }

    pub fn has_edge(&self, a: VertexId, b: VertexId) -> bool {
        self.adj.get(&a).is_some_and(|n| n.contains(&b))
    }

    pub fn degree(&self, v: VertexId) -> Result<usize> {
        self.degree.get(&v).copied().ok_or(Error::MissingVertex(v))
    }

    pub fn degrees(&self) -> &BTreeMap<VertexId, usize> {
        &self.degree
    }

    /// Degrees recounted from the adjacency lists.
    pub fn recount_degrees(&self) -> BTreeMap<VertexId, usize> {
        self.adj.iter().map(|(v, n)| (*v, n.len())).collect()
    }

    /// Edges as ordered pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(VertexId, VertexId)> {
        self.adj
            .iter()
            .flat_map(|(&a, n)| n.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    pub fn is_border(&self, v: VertexId) -> bool {
        self.border.contains(&v)
    }

    pub fn border_vertices(&self) -> &BTreeSet<VertexId> {
        &self.border
    }

    pub fn deleted_edges(&self) -> &[(VertexId, VertexId)] {
        &self.deleted_edges
    }

    pub fn deleted_vertices(&self) -> &[VertexId] {
        &self.deleted_vertices
    }

    pub fn position(&self, v: VertexId) -> [f64; 2] {
        self.kind.position(v)
    }

    pub fn delete_edges(&self, edges: &[(VertexId, VertexId)]) -> Result<Modified> {
        let mut g = self.clone();
        for &(a, b) in edges {
            if !g.has_edge(a, b) {
                return Err(Error::MissingEdge(a, b));
            }
            g.adj.get_mut(&a).unwrap().remove(&b);
            g.adj.get_mut(&b).unwrap().remove(&a);
            *g.degree.get_mut(&a).unwrap() -= 1;
            *g.degree.get_mut(&b).unwrap() -= 1;
            g.deleted_edges.push((a.min(b), a.max(b)));
        }
        let isolated: Vec<VertexId> = edges
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|v| g.degree.get(v) == Some(&0))
            .collect();
        for v in &isolated {
            g.adj.remove(v);
            g.degree.remove(v);
            g.deleted_vertices.push(*v);
        }
        Ok(Modified { graph: g, isolated })
    }

    pub fn delete_vertices(&self, vertices: &[VertexId]) -> Result<Modified> {
        let mut g = self.clone();
        let mut touched = BTreeSet::new();
        for &v in vertices {
            let nbrs = g.adj.remove(&v).ok_or(Error::MissingVertex(v))?;
            g.degree.remove(&v);
            for w in nbrs {
                g.adj.get_mut(&w).unwrap().remove(&v);
                *g.degree.get_mut(&w).unwrap() -= 1;
                touched.insert(w);
            }
            g.deleted_vertices.push(v);
        }
        let isolated: Vec<VertexId> =
            touched.into_iter().filter(|w| g.degree.get(w) == Some(&0)).collect();
        for v in &isolated {
            g.adj.remove(v);
            g.degree.remove(v);
            g.deleted_vertices.push(*v);
        }
        Ok(Modified { graph: g, isolated })
    }

    /// Whether `set` induces a connected subgraph.
    pub fn is_connected_set(&self, set: &BTreeSet<VertexId>) -> bool {
        let Some(&start) = set.iter().next() else {
            return false;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            if let Some(nbrs) = self.adj.get(&v) {
                for &w in nbrs {
                    if set.contains(&w) && seen.insert(w) {
                        queue.push_back(w);
                    }
                }
            }
        }
        seen.len() == set.len()
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            kind: self.kind,
            extent: self.window,
            vertices: self.vertices().collect(),
            edges: if self.window.is_none() { Some(self.edges()) } else { None },
            deleted_edges: self.deleted_edges.clone(),
            deleted_vertices: self.deleted_vertices.clone(),
        }
    }

    pub fn from_file(file: &GraphFile) -> Result<Self> {
        match (file.kind, file.extent, &file.edges) {
            (LatticeKind::Custom, _, Some(edges)) | (_, None, Some(edges)) => {
                let mut g = LatticeGraph::custom(&file.vertices, edges)?;
                g.kind = file.kind;
                g.deleted_edges = file.deleted_edges.clone();
                g.deleted_vertices = file.deleted_vertices.clone();
                Ok(g)
            }
            (kind, Some(window), _) => {
                let base = build_lattice(kind, window)?;
                let explicit: Vec<VertexId> = file
                    .deleted_vertices
                    .iter()
                    .copied()
                    .filter(|v| base.contains(*v))
                    .collect();
                let g = base.delete_vertices(&explicit)?.graph;
                let edges: Vec<_> =
                    file.deleted_edges.iter().copied().filter(|&(a, b)| g.has_edge(a, b)).collect();
                let g = g.delete_edges(&edges)?.graph;
                let listed: BTreeSet<VertexId> = file.vertices.iter().copied().collect();
                let actual: BTreeSet<VertexId> = g.vertices().collect();
                if !listed.is_empty() && listed != actual {
                    return Err(Error::Format("vertex list disagrees with extent and deletions".into()));
                }
                Ok(g)
            }
            (kind, None, None) => {
                let set = file.vertices.iter().copied().collect();
                LatticeGraph::induced(kind, &set)
            }
        }
    }
}

/// JSON graph format: `{kind, extent, vertices: [[j,n1,n2]...], deleted_edges, deleted_vertices}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub kind: LatticeKind,
    pub extent: Option<CellWindow>,
    pub vertices: Vec<VertexId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(VertexId, VertexId)>>,
    #[serde(default)]
    pub deleted_edges: Vec<(VertexId, VertexId)>,
    #[serde(default)]
    pub deleted_vertices: Vec<VertexId>,
}

/// The six vertices of the hexagonal cell centred at `v(n)`, counter-clockwise from angle 0.
pub fn hexagon_ring(n1: i32, n2: i32) -> [VertexId; 6] {
    [
        VertexId::new(2, n1, n2),
        VertexId::new(1, n1, n2 + 1),
        VertexId::new(2, n1 - 1, n2 + 1),
        VertexId::new(1, n1 - 1, n2 + 1),
        VertexId::new(2, n1 - 1, n2),
        VertexId::new(1, n1, n2),
    ]
}

/// Hexagonal cells (by centre index) whose boundary contains `v`.
pub fn cells_of_hex_vertex(v: VertexId) -> [(i32, i32); 3] {
    let (n1, n2) = (v.n1, v.n2);
    if v.sub == 1 {
        [(n1, n2), (n1, n2 - 1), (n1 + 1, n2 - 1)]
    } else {
        [(n1, n2), (n1 + 1, n2 - 1), (n1 + 1, n2)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hexagonal_single_cell() {
        let g = build_lattice(LatticeKind::Hexagonal, CellWindow::new((0, 0), (0, 0))).unwrap();
        assert_eq!(g.vertex_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.border_vertices().len(), 2);
    }

    #[test]
    fn square_three_by_three() {
        let g = build_lattice(LatticeKind::Square, CellWindow::new((0, 2), (0, 2))).unwrap();
        assert_eq!(g.vertex_count(), 9);
        assert_eq!(g.edge_count(), 12);
    }

    #[test]
    fn hexagonal_edges_have_unit_length() {
        let g = build_lattice(LatticeKind::Hexagonal, CellWindow::centered(3)).unwrap();
        for (a, b) in g.edges() {
            let (pa, pb) = (g.position(a), g.position(b));
            let d = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            assert!((d - 1.0).abs() < 1e-12, "{a} {b} {d}");
        }
    }

    #[test]
    fn ring_is_a_cycle_around_the_centre() {
        let ring = hexagon_ring(2, -1);
        let g = build_lattice(LatticeKind::Hexagonal, CellWindow::centered(4)).unwrap();
        let centre = {
            let [b1, b2] = LatticeKind::Hexagonal.basis();
            [2.0 * b1[0] - b2[0], 2.0 * b1[1] - b2[1]]
        };
        for i in 0..6 {
            assert!(g.has_edge(ring[i], ring[(i + 1) % 6]));
            let p = g.position(ring[i]);
            let angle = (p[1] - centre[1]).atan2(p[0] - centre[0]);
            let expected = std::f64::consts::PI / 3.0 * i as f64;
            let diff = (angle - expected).rem_euclid(2.0 * std::f64::consts::PI);
            assert!(diff < 1e-9 || diff > 2.0 * std::f64::consts::PI - 1e-9);
            assert!(cells_of_hex_vertex(ring[i]).contains(&(2, -1)));
        }
    }

    #[test]
    fn json_round_trip_keeps_deletions() {
        let g = build_lattice(LatticeKind::Hexagonal, CellWindow::centered(2)).unwrap();
        let g = g.delete_vertices(&[VertexId::new(1, 0, 0)]).unwrap().graph;
        let text = serde_json::to_string(&g.to_file()).unwrap();
        let back = LatticeGraph::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.vertices().collect::<Vec<_>>(), g.vertices().collect::<Vec<_>>());
        assert_eq!(back.edges(), g.edges());
        assert!(text.contains("[1,0,0]"));
    }
}

//! Circular planar resistor networks: D-N maps, connections, criticality, the six elementary
//! transformations and reduction.
//!
//! The planar embedding is kept combinatorially as a rotation system: for every vertex the
//! counter-clockwise cyclic list of incident edge slots (a loop occupies two slots).

use crate::error::{Error, Result};
use crate::lattice::{LatticeGraph, VertexId};
use crate::region::Region;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub a: u32,
    pub b: u32,
    pub gamma: f64,
}

impl NetworkEdge {
    pub fn is_loop(&self) -> bool {
        self.a == self.b
    }

    pub fn other(&self, v: u32) -> u32 {
        if self.a == v {
            self.b
        } else {
            self.a
        }
    }

    fn joins(&self, x: u32, y: u32) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConductanceNetwork {
    boundary: Vec<u32>,
    vertices: BTreeSet<u32>,
    edges: Vec<NetworkEdge>,
    rotation: BTreeMap<u32, Vec<usize>>,
    positions: BTreeMap<u32, [f64; 2]>,
}

/// On-disk form: `{boundary_order, edges: [[u, v, gamma]], interior?, positions?, rotation?}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkFile {
    pub boundary_order: Vec<u32>,
    pub edges: Vec<(u32, u32, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interior: Vec<u32>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub positions: BTreeMap<u32, [f64; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rotation: BTreeMap<u32, Vec<usize>>,
}

impl ConductanceNetwork {
    /// Build a network; the rotation system comes from `positions` where given, otherwise from
    /// edge order.
    pub fn new(
        boundary: Vec<u32>,
        edges: Vec<NetworkEdge>,
        extra_vertices: impl IntoIterator<Item = u32>,
        positions: BTreeMap<u32, [f64; 2]>,
    ) -> Result<Self> {
        if boundary.is_empty() {
            return Err(Error::Empty("boundary"));
        }
        let mut vertices: BTreeSet<u32> = boundary.iter().copied().collect();
        if vertices.len() != boundary.len() {
            return Err(Error::Network("boundary order repeats a vertex".into()));
        }
        for e in &edges {
            if !(e.gamma > 0.0 && e.gamma.is_finite()) {
                return Err(Error::Network(format!("conductance {} on edge {}-{} is not positive", e.gamma, e.a, e.b)));
            }
            vertices.insert(e.a);
            vertices.insert(e.b);
        }
        vertices.extend(extra_vertices);
        let mut rotation: BTreeMap<u32, Vec<usize>> = vertices.iter().map(|&v| (v, Vec::new())).collect();
        for (i, e) in edges.iter().enumerate() {
            rotation.get_mut(&e.a).expect("endpoint registered").push(i);
            rotation.get_mut(&e.b).expect("endpoint registered").push(i);
        }
        for (v, slots) in rotation.iter_mut() {
            if let Some(&pv) = positions.get(v) {
                let angle = |i: usize| {
                    let w = edges[i].other(*v);
                    positions.get(&w).map(|pw| (pw[1] - pv[1]).atan2(pw[0] - pv[0])).unwrap_or(0.0)
                };
                slots.sort_by(|&i, &j| angle(i).total_cmp(&angle(j)).then(i.cmp(&j)));
            }
        }
        Ok(ConductanceNetwork { boundary, vertices, edges, rotation, positions })
    }

    pub fn from_file(file: NetworkFile) -> Result<Self> {
        let edges = file.edges.iter().map(|&(a, b, gamma)| NetworkEdge { a, b, gamma }).collect();
        let mut net = ConductanceNetwork::new(file.boundary_order, edges, file.interior, file.positions)?;
        if !file.rotation.is_empty() {
            for (v, slots) in file.rotation {
                let current = net.rotation.get_mut(&v).ok_or_else(|| Error::Network(format!("rotation names unknown vertex {v}")))?;
                let (mut a, mut b) = (current.clone(), slots.clone());
                a.sort_unstable();
                b.sort_unstable();
                if a != b {
                    return Err(Error::Network(format!("rotation at {v} does not list its incident edges")));
                }
                *current = slots;
            }
        }
        Ok(net)
    }

    pub fn to_file(&self) -> NetworkFile {
        let boundary: BTreeSet<u32> = self.boundary.iter().copied().collect();
        NetworkFile {
            boundary_order: self.boundary.clone(),
            edges: self.edges.iter().map(|e| (e.a, e.b, e.gamma)).collect(),
            interior: self.vertices.iter().copied().filter(|v| !boundary.contains(v)).collect(),
            positions: self.positions.clone(),
            rotation: self.rotation.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    /// The network of a lattice region with unit conductances: interior edges plus the edges to
    /// the boundary; boundary vertices ordered counter-clockwise around the interior centroid.
    pub fn from_region(graph: &LatticeGraph, region: &Region) -> Result<(Self, BTreeMap<u32, VertexId>)> {
        let all: Vec<VertexId> = region.interior().iter().chain(region.boundary()).copied().collect();
        let label: BTreeMap<VertexId, u32> = all.iter().enumerate().map(|(i, v)| (*v, i as u32)).collect();
        let mut edges = Vec::new();
        for &v in region.interior() {
            for &w in graph.neighbors(v)? {
                if region.is_boundary(w) || (region.is_interior(w) && v < w) {
                    edges.push(NetworkEdge { a: label[&v], b: label[&w], gamma: 1.0 });
                }
            }
        }
        let positions: BTreeMap<u32, [f64; 2]> = all.iter().map(|v| (label[v], graph.position(*v))).collect();
        let n = region.interior().len() as f64;
        let centre = region.interior().iter().fold([0.0, 0.0], |acc, v| {
            let p = graph.position(*v);
            [acc[0] + p[0] / n, acc[1] + p[1] / n]
        });
        let mut boundary: Vec<u32> = region.boundary().iter().map(|v| label[v]).collect();
        boundary.sort_by(|a, b| {
            let ang = |x: &u32| {
                let p = positions[x];
                (p[1] - centre[1]).atan2(p[0] - centre[0])
            };
            ang(a).total_cmp(&ang(b))
        });
        let names = label.iter().map(|(v, l)| (*l, *v)).collect();
        Ok((ConductanceNetwork::new(boundary, edges, [], positions)?, names))
    }

    pub fn boundary(&self) -> &[u32] {
        &self.boundary
    }

    pub fn vertices(&self) -> &BTreeSet<u32> {
        &self.vertices
    }

    pub fn edges(&self) -> &[NetworkEdge] {
        &self.edges
    }

    pub fn is_boundary(&self, v: u32) -> bool {
        self.boundary.contains(&v)
    }

    pub fn interior(&self) -> Vec<u32> {
        self.vertices.iter().copied().filter(|v| !self.is_boundary(*v)).collect()
    }

    /// Number of edge slots at `v`; a loop counts twice.
    pub fn degree(&self, v: u32) -> usize {
        self.rotation.get(&v).map_or(0, Vec::len)
    }

    pub fn rotation(&self, v: u32) -> &[usize] {
        self.rotation.get(&v).map_or(&[], |r| r.as_slice())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn adjacency(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut adj: BTreeMap<u32, Vec<u32>> = self.vertices.iter().map(|&v| (v, Vec::new())).collect();
        for e in self.edges.iter().filter(|e| !e.is_loop()) {
            adj.get_mut(&e.a).expect("registered").push(e.b);
            adj.get_mut(&e.b).expect("registered").push(e.a);
        }
        adj
    }

    /// Drop edge `idx` from the edge list and every rotation, renumbering later edges.
    fn remove_edge(&mut self, idx: usize) {
        self.edges.remove(idx);
        for slots in self.rotation.values_mut() {
            slots.retain(|&s| s != idx);
            for s in slots.iter_mut() {
                if *s > idx {
                    *s -= 1;
                }
            }
        }
    }

    fn remove_vertex(&mut self, v: u32) {
        self.vertices.remove(&v);
        self.rotation.remove(&v);
        self.positions.remove(&v);
    }
}

/// `Λ_res` in the boundary order of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ResistorDnMap {
    pub boundary: Vec<u32>,
    pub matrix: DMatrix<f64>,
}

impl ResistorDnMap {
    /// `max |Λ − Λ'| / max |Λ|` after aligning boundary orders.
    pub fn relative_difference(&self, other: &ResistorDnMap) -> Result<f64> {
        let pos: BTreeMap<u32, usize> = other.boundary.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let n = self.boundary.len();
        if other.boundary.len() != n {
            return Err(Error::Network("boundary sizes differ".into()));
        }
        let idx: Vec<usize> = self
            .boundary
            .iter()
            .map(|v| pos.get(v).copied().ok_or_else(|| Error::Network(format!("boundary vertex {v} missing"))))
            .collect::<Result<_>>()?;
        let scale = self.matrix.amax().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.matrix[(i, j)] - other.matrix[(idx[i], idx[j])]).abs());
            }
        }
        Ok(worst / scale)
    }
}

/// `Λ_res f = −Δ_res u` on the boundary for the harmonic extension `u` of `f`.
///
/// Isolated interior vertices are ignored; every other vertex must be connected to the rest.
pub fn dn_map_res(net: &ConductanceNetwork) -> Result<ResistorDnMap> {
    let active: Vec<u32> =
        net.vertices.iter().copied().filter(|&v| net.is_boundary(v) || net.degree(v) > 0).collect();
    let adj = net.adjacency();
    let mut seen = BTreeSet::from([active[0]]);
    let mut queue = VecDeque::from([active[0]]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[&v] {
            if seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    if seen.len() != active.len() {
        return Err(Error::Disconnected);
    }
    let interior: Vec<u32> = active.iter().copied().filter(|v| !net.is_boundary(*v)).collect();
    let bpos: BTreeMap<u32, usize> = net.boundary.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let ipos: BTreeMap<u32, usize> = interior.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let (nb, ni) = (net.boundary.len(), interior.len());
    let mut kbb = DMatrix::<f64>::zeros(nb, nb);
    let mut kbi = DMatrix::<f64>::zeros(nb, ni);
    let mut kii = DMatrix::<f64>::zeros(ni, ni);
    for e in net.edges.iter().filter(|e| !e.is_loop()) {
        for (x, y) in [(e.a, e.b), (e.b, e.a)] {
            match (bpos.get(&x), ipos.get(&x)) {
                (Some(&i), _) => {
                    kbb[(i, i)] += e.gamma;
                    match (bpos.get(&y), ipos.get(&y)) {
                        (Some(&j), _) => kbb[(i, j)] -= e.gamma,
                        (_, Some(&j)) => kbi[(i, j)] -= e.gamma,
                        _ => unreachable!("endpoints are registered"),
                    }
                }
                (_, Some(&i)) => {
                    kii[(i, i)] += e.gamma;
                    if let Some(&j) = ipos.get(&y) {
                        kii[(i, j)] -= e.gamma;
                    }
                }
                _ => unreachable!("endpoints are registered"),
            }
        }
    }
    let matrix = if ni == 0 {
        kbb
    } else {
        let lu = kii.lu();
        let y = lu.solve(&kbi.transpose()).ok_or(Error::Disconnected)?;
        kbb - &kbi * y
    };
    Ok(ResistorDnMap { boundary: net.boundary.clone(), matrix })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    Point,
    Loop,
    DeadArm,
    Series,
    Parallel,
    YDelta,
}

/// An elementary transformation at a concrete site. Edge sites are edge indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transform {
    Point(u32),
    Loop(usize),
    DeadArm(usize),
    Series(u32),
    Parallel(usize, usize),
    YDelta(u32),
}

impl Transform {
    pub fn kind(&self) -> TransformKind {
        match self {
            Transform::Point(_) => TransformKind::Point,
            Transform::Loop(_) => TransformKind::Loop,
            Transform::DeadArm(_) => TransformKind::DeadArm,
            Transform::Series(_) => TransformKind::Series,
            Transform::Parallel(..) => TransformKind::Parallel,
            Transform::YDelta(_) => TransformKind::YDelta,
        }
    }
}

fn inapplicable(t: Transform, why: &str) -> Error {
    Error::Inapplicable(format!("{t:?}: {why}"))
}

/// The pendant interior endpoint of edge `idx`, if it is a dead arm.
fn dead_arm_tip(net: &ConductanceNetwork, idx: usize) -> Option<u32> {
    let e = net.edges.get(idx)?;
    if e.is_loop() {
        return None;
    }
    [e.b, e.a].into_iter().find(|&w| !net.is_boundary(w) && net.degree(w) == 1)
}

fn check(net: &ConductanceNetwork, t: Transform) -> Result<()> {
    let interior = |v: u32| -> Result<()> {
        if !net.vertices.contains(&v) {
            return Err(inapplicable(t, "unknown vertex"));
        }
        if net.is_boundary(v) {
            return Err(inapplicable(t, "boundary vertex"));
        }
        Ok(())
    };
    let edge = |i: usize| net.edges.get(i).copied().ok_or_else(|| inapplicable(t, "unknown edge"));
    match t {
        Transform::Point(v) => {
            interior(v)?;
            if net.degree(v) != 0 {
                return Err(inapplicable(t, "vertex is not isolated"));
            }
        }
        Transform::Loop(i) => {
            if !edge(i)?.is_loop() {
                return Err(inapplicable(t, "edge is not a loop"));
            }
        }
        Transform::DeadArm(i) => {
            edge(i)?;
            if dead_arm_tip(net, i).is_none() {
                return Err(inapplicable(t, "no interior endpoint of degree 1"));
            }
        }
        Transform::Series(v) => {
            interior(v)?;
            let slots = net.rotation(v);
            if slots.len() != 2 || slots[0] == slots[1] {
                return Err(inapplicable(t, "vertex does not have degree 2"));
            }
        }
        Transform::Parallel(i, j) => {
            let (a, b) = (edge(i)?, edge(j)?);
            if i == j || a.is_loop() || !a.joins(b.a, b.b) {
                return Err(inapplicable(t, "edges do not join the same two vertices"));
            }
        }
        Transform::YDelta(v) => {
            interior(v)?;
            let slots = net.rotation(v);
            if slots.len() != 3 {
                return Err(inapplicable(t, "vertex does not have degree 3"));
            }
            let ends: BTreeSet<u32> = slots.iter().map(|&s| net.edges[s].other(v)).collect();
            if ends.len() != 3 || ends.contains(&v) {
                return Err(inapplicable(t, "star arms do not reach three distinct vertices"));
            }
        }
    }
    Ok(())
}

/// Replace the slot holding edge `old` at `v` by `new` (in counter-clockwise order).
fn splice(net: &mut ConductanceNetwork, v: u32, old: usize, new: &[usize]) {
    let slots = net.rotation.get_mut(&v).expect("vertex has a rotation");
    let at = slots.iter().position(|&s| s == old).expect("edge incident to vertex");
    slots.splice(at..=at, new.iter().copied());
}

pub fn apply_transform(net: &ConductanceNetwork, t: Transform) -> Result<ConductanceNetwork> {
    check(net, t)?;
    let mut out = net.clone();
    match t {
        Transform::Point(v) => out.remove_vertex(v),
        Transform::Loop(i) => out.remove_edge(i),
        Transform::DeadArm(i) => {
            let tip = dead_arm_tip(net, i).expect("checked");
            out.remove_edge(i);
            out.remove_vertex(tip);
        }
        Transform::Series(a) => {
            let (e1, e2) = (net.rotation(a)[0], net.rotation(a)[1]);
            let (b, c) = (net.edges[e1].other(a), net.edges[e2].other(a));
            let gamma = 1.0 / (1.0 / net.edges[e1].gamma + 1.0 / net.edges[e2].gamma);
            let new = out.edges.len();
            out.edges.push(NetworkEdge { a: b, b: c, gamma });
            splice(&mut out, b, e1, &[new]);
            splice(&mut out, c, e2, &[new]);
            let (hi, lo) = (e1.max(e2), e1.min(e2));
            out.remove_edge(hi);
            out.remove_edge(lo);
            out.remove_vertex(a);
        }
        Transform::Parallel(i, j) => {
            out.edges[i].gamma += net.edges[j].gamma;
            out.remove_edge(j);
        }
        Transform::YDelta(centre) => {
            let slots = net.rotation(centre).to_vec();
            let arm = |k: usize| net.edges[slots[k % 3]];
            let ends: Vec<u32> = (0..3).map(|k| arm(k).other(centre)).collect();
            let total: f64 = (0..3).map(|k| arm(k).gamma).sum();
            let base = out.edges.len();
            // Triangle edge k joins ends[k] and ends[k+1].
            for k in 0..3 {
                out.edges.push(NetworkEdge { a: ends[k], b: ends[(k + 1) % 3], gamma: arm(k).gamma * arm(k + 1).gamma / total });
            }
            for k in 0..3 {
                // Counter-clockwise around ends[k]: towards the next arm, then the previous one.
                splice(&mut out, ends[k], slots[k], &[base + k, base + (k + 2) % 3]);
            }
            let mut doomed = slots.clone();
            doomed.sort_unstable_by(|a, b| b.cmp(a));
            for s in doomed {
                out.remove_edge(s);
            }
            out.remove_vertex(centre);
        }
    }
    Ok(out)
}

/// Every applicable transformation site, in kind order.
pub fn applicable_transforms(net: &ConductanceNetwork) -> Vec<Transform> {
    let mut out = Vec::new();
    for &v in &net.vertices {
        if !net.is_boundary(v) && net.degree(v) == 0 {
            out.push(Transform::Point(v));
        }
    }
    for (i, e) in net.edges.iter().enumerate() {
        if e.is_loop() {
            out.push(Transform::Loop(i));
        }
    }
    for i in 0..net.edges.len() {
        if dead_arm_tip(net, i).is_some() {
            out.push(Transform::DeadArm(i));
        }
    }
    for &v in &net.vertices {
        if check(net, Transform::Series(v)).is_ok() {
            out.push(Transform::Series(v));
        }
    }
    for i in 0..net.edges.len() {
        for j in i + 1..net.edges.len() {
            if check(net, Transform::Parallel(i, j)).is_ok() {
                out.push(Transform::Parallel(i, j));
            }
        }
    }
    for &v in &net.vertices {
        if check(net, Transform::YDelta(v)).is_ok() {
            out.push(Transform::YDelta(v));
        }
    }
    out
}

/// Arcs under the straight-ahead convention: starting on the boundary, a trail leaves each
/// interior vertex of even degree `d` through the slot `d/2` positions further round the
/// rotation, and ends without counting at an interior vertex of odd degree. Loops are skipped.
/// Every trail joining two boundary vertices is one arc.
pub fn count_arcs(net: &ConductanceNetwork) -> usize {
    let rot = |v: u32| -> Vec<usize> { net.rotation(v).iter().copied().filter(|&s| !net.edges[s].is_loop()).collect() };
    let mut ends = 0;
    for &b in &net.boundary {
        for s in rot(b) {
            let (mut at, mut via) = (net.edges[s].other(b), s);
            let mut steps = 0;
            loop {
                if net.is_boundary(at) {
                    ends += 1;
                    break;
                }
                let slots = rot(at);
                let d = slots.len();
                if d % 2 == 1 || d == 0 || steps > 4 * net.edges.len() {
                    break;
                }
                let Some(k) = slots.iter().position(|&x| x == via) else { break };
                // Parallel edges share an index, so pick the matching occurrence on the far side.
                via = slots[(k + d / 2) % d];
                at = net.edges[via].other(at);
                steps += 1;
            }
        }
    }
    ends / 2
}

/// Vertex-disjoint paths `p_i → q_i` through interior vertices, one per pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Connection {
    pub p: Vec<u32>,
    pub q: Vec<u32>,
    pub paths: Vec<Vec<u32>>,
}

/// Whether `P + reverse(Q)` runs round the boundary circle in one direction.
pub fn is_circular_pair(net: &ConductanceNetwork, p: &[u32], q: &[u32]) -> bool {
    let n = net.boundary.len();
    let pos: BTreeMap<u32, usize> = net.boundary.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let seq: Option<Vec<usize>> = p.iter().chain(q.iter().rev()).map(|v| pos.get(v).copied()).collect();
    let Some(seq) = seq else { return false };
    let monotone = |dir: isize| {
        let mut total = 0;
        for w in seq.windows(2) {
            total += ((w[1] as isize - w[0] as isize) * dir).rem_euclid(n as isize) as usize;
        }
        total < n
    };
    seq.len() <= n && (monotone(1) || monotone(-1))
}

fn validate_pair(net: &ConductanceNetwork, p: &[u32], q: &[u32]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Network(format!("sequences have lengths {} and {}", p.len(), q.len())));
    }
    if p.is_empty() {
        return Err(Error::Empty("connection"));
    }
    let all: BTreeSet<u32> = p.iter().chain(q).copied().collect();
    if all.len() != 2 * p.len() {
        return Err(Error::Network("connection endpoints must be distinct".into()));
    }
    if let Some(v) = all.iter().find(|v| !net.is_boundary(**v)) {
        return Err(Error::Network(format!("{v} is not a boundary vertex")));
    }
    if !is_circular_pair(net, p, q) {
        return Err(Error::Network("P and Q do not form a circular pair".into()));
    }
    Ok(())
}

/// Unit-capacity max-flow on the vertex-split graph.
struct FlowNet {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i32>,
}

impl FlowNet {
    fn new(n: usize) -> Self {
        FlowNet { head: vec![Vec::new(); n], to: Vec::new(), cap: Vec::new() }
    }

    fn arc(&mut self, a: usize, b: usize) {
        self.head[a].push(self.to.len());
        self.to.push(b);
        self.cap.push(1);
        self.head[b].push(self.to.len());
        self.to.push(a);
        self.cap.push(0);
    }

    fn augment(&mut self, s: usize, t: usize) -> bool {
        let mut prev = vec![usize::MAX; self.head.len()];
        let mut queue = VecDeque::from([s]);
        prev[s] = usize::MAX - 1;
        while let Some(x) = queue.pop_front() {
            if x == t {
                break;
            }
            for &e in &self.head[x] {
                let y = self.to[e];
                if self.cap[e] > 0 && prev[y] == usize::MAX {
                    prev[y] = e;
                    queue.push_back(y);
                }
            }
        }
        if prev[t] == usize::MAX {
            return false;
        }
        let mut x = t;
        while x != s {
            let e = prev[x];
            self.cap[e] -= 1;
            self.cap[e ^ 1] += 1;
            x = self.to[e ^ 1];
        }
        true
    }
}

/// `Some(connection)` iff `(P, Q)` is connected through the network.
pub fn is_connection(net: &ConductanceNetwork, p: &[u32], q: &[u32]) -> Result<Option<Connection>> {
    validate_pair(net, p, q)?;
    Ok(connect(net, p, q))
}

fn connect(net: &ConductanceNetwork, p: &[u32], q: &[u32]) -> Option<Connection> {
    let index: BTreeMap<u32, usize> = net.vertices.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let n = index.len();
    let (s, t) = (2 * n, 2 * n + 1);
    let mut flow = FlowNet::new(2 * n + 2);
    let pset: BTreeSet<u32> = p.iter().copied().collect();
    let qset: BTreeSet<u32> = q.iter().copied().collect();
    for (&v, &i) in &index {
        if !net.is_boundary(v) {
            flow.arc(2 * i, 2 * i + 1);
        }
    }
    for &v in p {
        flow.arc(s, 2 * index[&v] + 1);
    }
    for &v in q {
        flow.arc(2 * index[&v], t);
    }
    let usable = |v: u32| !net.is_boundary(v) || pset.contains(&v) || qset.contains(&v);
    for e in net.edges.iter().filter(|e| !e.is_loop()) {
        if usable(e.a) && usable(e.b) {
            flow.arc(2 * index[&e.a] + 1, 2 * index[&e.b]);
            flow.arc(2 * index[&e.b] + 1, 2 * index[&e.a]);
        }
    }
    let mut k = 0;
    while k < p.len() && flow.augment(s, t) {
        k += 1;
    }
    if k < p.len() {
        return None;
    }
    let label: Vec<u32> = net.vertices.iter().copied().collect();
    let mut paths = Vec::new();
    for &start in p {
        let mut path = vec![start];
        let mut x = 2 * index[&start] + 1;
        loop {
            // Follow a saturated forward arc out of `x`.
            let next = flow.head[x].iter().copied().find(|&e| e % 2 == 0 && flow.cap[e] == 0 && flow.to[e] != s);
            let Some(e) = next else { return None };
            flow.cap[e] = -1;
            let y = flow.to[e];
            if y == t {
                break;
            }
            let v = label[y / 2];
            if y % 2 == 0 {
                path.push(v);
                if qset.contains(&v) {
                    x = y;
                    continue;
                }
                x = y + 1;
                let inner = flow.head[y].iter().copied().find(|&e| flow.to[e] == y + 1 && e % 2 == 0);
                if inner.is_none() {
                    return None;
                }
            } else {
                x = y;
            }
        }
        paths.push(path);
    }
    // Planarity forces the pairing p_i → q_i for circular pairs; verify it anyway.
    for (i, path) in paths.iter().enumerate() {
        if path.last() != Some(&q[i]) {
            return None;
        }
    }
    Some(Connection { p: p.to_vec(), q: q.to_vec(), paths })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum RemovalMode {
    Delete,
    Contract,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeCertificate {
    pub edge: usize,
    pub mode: RemovalMode,
    pub p: Vec<u32>,
    pub q: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Criticality {
    /// A connection broken by every removal.
    Critical(Vec<EdgeCertificate>),
    /// A removal that provably breaks no connection of size at most `k_max`.
    NotCritical { edge: usize, mode: RemovalMode, reason: String },
    /// The search budget ran out before a removal was settled.
    Unknown { edge: usize, mode: RemovalMode, evaluated: usize },
}

impl Criticality {
    pub fn is_critical(&self) -> Option<bool> {
        match self {
            Criticality::Critical(_) => Some(true),
            Criticality::NotCritical { .. } => Some(false),
            Criticality::Unknown { .. } => None,
        }
    }
}

/// Network after removing edge `idx`; contraction keeps a boundary label when there is one.
fn remove(net: &ConductanceNetwork, idx: usize, mode: RemovalMode) -> ConductanceNetwork {
    let mut out = net.clone();
    let e = net.edges[idx];
    out.remove_edge(idx);
    if mode == RemovalMode::Contract && !e.is_loop() {
        let (keep, gone) = if net.is_boundary(e.b) && !net.is_boundary(e.a) { (e.b, e.a) } else { (e.a, e.b) };
        for edge in out.edges.iter_mut() {
            if edge.a == gone {
                edge.a = keep;
            }
            if edge.b == gone {
                edge.b = keep;
            }
        }
        let moved = out.rotation.remove(&gone).unwrap_or_default();
        out.rotation.get_mut(&keep).expect("kept vertex").extend(moved);
        out.vertices.remove(&gone);
        out.boundary.retain(|&b| b != gone);
    }
    out
}

/// Every circular pair `(P, Q)` with `|P| = k`, contiguous blocks first.
fn circular_pairs(boundary: &[u32], k: usize) -> Vec<(Vec<u32>, Vec<u32>)> {
    let n = boundary.len();
    let mut out = Vec::new();
    if 2 * k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..2 * k).collect();
    loop {
        for r in 0..k {
            let p: Vec<u32> = (0..k).map(|i| boundary[idx[(r + i) % (2 * k)]]).collect();
            let q: Vec<u32> = (0..k).map(|i| boundary[idx[(r + 2 * k - 1 - i) % (2 * k)]]).collect();
            out.push((p, q));
        }
        // Next combination of 2k positions.
        let mut i = 2 * k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - 2 * k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..2 * k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn contiguous_pairs(boundary: &[u32], k: usize) -> Vec<(Vec<u32>, Vec<u32>)> {
    let n = boundary.len();
    let mut out = Vec::new();
    if 2 * k > n {
        return out;
    }
    for s in 0..n {
        for gap in 0..=(n - 2 * k) {
            let p: Vec<u32> = (0..k).map(|i| boundary[(s + i) % n]).collect();
            let q: Vec<u32> = (0..k).map(|i| boundary[(s + k + gap + k - 1 - i) % n]).collect();
            out.push((p, q));
        }
    }
    out
}

/// A reason why removing the edge cannot break any connection, when one is structural.
fn harmless_removal(net: &ConductanceNetwork, idx: usize, mode: RemovalMode) -> Option<String> {
    let e = net.edges[idx];
    if e.is_loop() {
        return Some("loops carry no path".into());
    }
    if dead_arm_tip(net, idx).is_some() {
        return Some("dead arm".into());
    }
    match mode {
        RemovalMode::Delete => net
            .edges
            .iter()
            .enumerate()
            .any(|(j, f)| j != idx && f.joins(e.a, e.b))
            .then(|| "a parallel edge remains".into()),
        RemovalMode::Contract => [e.a, e.b]
            .into_iter()
            .any(|v| !net.is_boundary(v) && net.degree(v) == 2)
            .then(|| "edge is in series through an interior vertex of degree 2".into()),
    }
}

/// Three-valued criticality test over connections of size at most `k_max`, spending at most
/// `budget` max-flow evaluations.
pub fn is_critical(net: &ConductanceNetwork, k_max: usize, budget: usize) -> Criticality {
    is_critical_in(net, k_max, budget, &[RemovalMode::Delete, RemovalMode::Contract])
}

/// [`is_critical`] restricted to the listed removal modes.
pub fn is_critical_in(net: &ConductanceNetwork, k_max: usize, budget: usize, modes: &[RemovalMode]) -> Criticality {
    let mut evaluated = 0;
    let mut certificates = Vec::new();
    let k_top = k_max.min(net.boundary.len() / 2);
    let mut in_g: BTreeMap<(Vec<u32>, Vec<u32>), bool> = BTreeMap::new();
    let mut candidates: Vec<(Vec<u32>, Vec<u32>)> = Vec::new();
    for k in (1..=k_top).rev() {
        candidates.extend(contiguous_pairs(&net.boundary, k));
    }
    for idx in 0..net.edges.len() {
        for &mode in modes {
            if let Some(reason) = harmless_removal(net, idx, mode) {
                return Criticality::NotCritical { edge: idx, mode, reason };
            }
            let reduced = remove(net, idx, mode);
            let mut breaks = |p: &Vec<u32>, q: &Vec<u32>, evaluated: &mut usize| -> bool {
                let key = (p.clone(), q.clone());
                let connected = *in_g.entry(key).or_insert_with(|| {
                    *evaluated += 1;
                    connect(net, p, q).is_some()
                });
                if !connected {
                    return false;
                }
                let present = p.iter().chain(q).all(|v| reduced.is_boundary(*v));
                *evaluated += 1;
                !present || connect(&reduced, p, q).is_none()
            };
            let mut found = None;
            for (p, q) in &candidates {
                if breaks(p, q, &mut evaluated) {
                    found = Some((p.clone(), q.clone()));
                    break;
                }
                if evaluated > budget {
                    return Criticality::Unknown { edge: idx, mode, evaluated };
                }
            }
            if found.is_none() {
                'outer: for k in (1..=k_top).rev() {
                    for (p, q) in circular_pairs(&net.boundary, k) {
                        if breaks(&p, &q, &mut evaluated) {
                            found = Some((p, q));
                            break 'outer;
                        }
                        if evaluated > budget {
                            return Criticality::Unknown { edge: idx, mode, evaluated };
                        }
                    }
                }
            }
            match found {
                Some((p, q)) => certificates.push(EdgeCertificate { edge: idx, mode, p, q }),
                None => {
                    return Criticality::NotCritical {
                        edge: idx,
                        mode,
                        reason: format!("exhaustive search over circular pairs up to size {k_top}"),
                    }
                }
            }
        }
    }
    Criticality::Critical(certificates)
}

/// Structural counts tracked through a reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GraphCounts {
    pub vertices: usize,
    pub edges: usize,
    pub arcs: usize,
}

pub fn counts(net: &ConductanceNetwork) -> GraphCounts {
    GraphCounts { vertices: net.vertex_count(), edges: net.edge_count(), arcs: count_arcs(net) }
}

#[derive(Clone, Debug)]
pub struct Reduction {
    pub network: ConductanceNetwork,
    pub steps: Vec<Transform>,
    pub history: Vec<GraphCounts>,
    /// Outcome of the criticality test that stopped the Y-Δ search, if one ran.
    pub critical: Option<bool>,
    pub completed: bool,
}

fn fingerprint(net: &ConductanceNetwork) -> Vec<(u32, u32, u64)> {
    let mut key: Vec<(u32, u32, u64)> =
        net.edges.iter().map(|e| (e.a.min(e.b), e.a.max(e.b), e.gamma.to_bits())).collect();
    key.sort_unstable();
    key
}

/// Apply Point, Loop, DeadArm, Series and Parallel until none applies, then Y-Δ steps (greedy,
/// never revisiting a graph) while the network is not certified critical.
pub fn reduce(net: &ConductanceNetwork, k_max: usize, budget: usize) -> Reduction {
    let mut current = net.clone();
    let mut steps = Vec::new();
    let mut history = vec![counts(&current)];
    let mut seen = HashSet::from([fingerprint(&current)]);
    let mut critical = None;
    let max_steps = 4 * (net.vertex_count() + net.edge_count()) + 16;
    while steps.len() < max_steps {
        let sites = applicable_transforms(&current);
        let simple = sites.iter().copied().find(|t| t.kind() != TransformKind::YDelta);
        let next = match simple {
            Some(t) => Some(t),
            None => {
                let verdict = is_critical(&current, k_max, budget).is_critical();
                critical = verdict;
                if verdict == Some(true) {
                    None
                } else {
                    sites.iter().copied().find(|&t| {
                        apply_transform(&current, t).map(|n| !seen.contains(&fingerprint(&n))).unwrap_or(false)
                    })
                }
            }
        };
        let Some(t) = next else {
            return Reduction { network: current, steps, history, critical, completed: true };
        };
        current = apply_transform(&current, t).expect("site listed as applicable");
        seen.insert(fingerprint(&current));
        steps.push(t);
        history.push(counts(&current));
    }
    Reduction { network: current, steps, history, critical, completed: false }
}

//! Convex-polygon holes in the hexagonal lattice and their detection from D-N maps.
//!
//! Cells are indexed by `(n1, n2)`, the hexagon centred at `n1 v1 + n2 v2`. A half-space bounds
//! one of the cell forms `n1`, `n2`, `n1 + n2`, so a convex polygon is a box in those three
//! coordinates. The hole left by a polygon `D` consists of its open interior: the vertices all
//! three of whose cells lie in `D`. Perimeter vertices stay, with degree 3 at inner angle `2π/3`
//! and degree 2 at inner angle `4π/3`.

use crate::bvp::{dn_map, is_regular, Convention, DnMap, Potential};
use crate::error::{Error, Result};
use crate::lattice::{build_lattice, cells_of_hex_vertex, hexagon_ring, CellWindow, LatticeGraph, LatticeKind, VertexId};
use crate::network::{ConductanceNetwork, NetworkEdge};
use crate::parallelogram::{level_a, level_m, level_x, HexParallelogram};
use crate::precision::Real;
use crate::reconstruction::{complete_probe, probe_data, probe_solution, LineFamily, ProbeSource};
use crate::region::{close_region, Region};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub type Cell = (i32, i32);

/// Cells are searched inside `|n1|, |n2| ≤ CELL_SEARCH` when a polygon is enumerated.
const CELL_SEARCH: i32 = 256;

/// Relative tolerance separating equal from unequal D-N responses.
pub const EQUALITY_TOLERANCE: f64 = 1e-8;

/// `max(|a|, |b|, |a + b|)`: the number of steps between cells `a` apart.
pub fn hex_distance(a: Cell, b: Cell) -> i32 {
    let (d1, d2) = (b.0 - a.0, b.1 - a.1);
    d1.abs().max(d2.abs()).max((d1 + d2).abs())
}

/// The linear cell forms bounded by half-spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellAxis {
    N1,
    N2,
    Sum,
}

impl CellAxis {
    pub const ALL: [CellAxis; 3] = [CellAxis::N1, CellAxis::N2, CellAxis::Sum];

    pub fn value(self, c: Cell) -> i32 {
        match self {
            CellAxis::N1 => c.0,
            CellAxis::N2 => c.1,
            CellAxis::Sum => c.0 + c.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HalfSign {
    /// `m ≥ k`.
    Plus,
    /// `m ≤ k`.
    Minus,
}

/// The union of unit hexagons `m v_i + l v_j + U_h` over all `l` and `m ≥ k` (or `m ≤ k`),
/// with `v3 = v2 − v1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HalfSpace {
    pub i: u8,
    pub j: u8,
    pub k: i32,
    pub sign: HalfSign,
}

impl HalfSpace {
    pub fn new(i: u8, j: u8, k: i32, sign: HalfSign) -> Result<Self> {
        if !(1..=3).contains(&i) || !(1..=3).contains(&j) || i == j {
            return Err(Error::Geometry(format!("half-space family ({i}, {j}) needs distinct indices in 1..=3")));
        }
        Ok(HalfSpace { i, j, k, sign })
    }

    /// `lo ≤ axis` or `axis ≤ hi` in the canonical family for that axis.
    pub fn bound(axis: CellAxis, sign: HalfSign, k: i32) -> Self {
        let (i, j) = match axis {
            CellAxis::N1 => (1, 2),
            CellAxis::N2 => (2, 1),
            CellAxis::Sum => (1, 3),
        };
        HalfSpace { i, j, k, sign }
    }

    /// The coefficient `m` of a cell centre written as `m v_i + l v_j`, as `(axis, ±1)`.
    pub fn form(&self) -> (CellAxis, i32) {
        match (self.i, self.j) {
            (1, 2) => (CellAxis::N1, 1),
            (3, 2) => (CellAxis::N1, -1),
            (2, 1) | (3, 1) => (CellAxis::N2, 1),
            (1, 3) | (2, 3) => (CellAxis::Sum, 1),
            _ => unreachable!("family validated on construction"),
        }
    }

    pub fn contains(&self, c: Cell) -> bool {
        let (axis, s) = self.form();
        let m = s * axis.value(c);
        match self.sign {
            HalfSign::Plus => m >= self.k,
            HalfSign::Minus => m <= self.k,
        }
    }

    /// The same set as a bound on the axis value.
    fn axis_bound(&self) -> (CellAxis, Option<i32>, Option<i32>) {
        let (axis, s) = self.form();
        match (self.sign, s > 0) {
            (HalfSign::Plus, true) | (HalfSign::Minus, false) => (axis, Some(s * self.k), None),
            _ => (axis, None, Some(s * self.k)),
        }
    }
}

impl fmt::Display for HalfSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.sign == HalfSign::Plus { '+' } else { '-' };
        write!(f, "H{s}({},{},{})", self.i, self.j, self.k)
    }
}

/// A box in the three cell coordinates: the hexagonal convex hull of a finite cell set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HexHull {
    pub n1: (i32, i32),
    pub n2: (i32, i32),
    pub sum: (i32, i32),
}

impl HexHull {
    pub fn of_cells<'a>(cells: impl IntoIterator<Item = &'a Cell>) -> Option<Self> {
        let mut it = cells.into_iter();
        let first = *it.next()?;
        let mut hull = HexHull {
            n1: (first.0, first.0),
            n2: (first.1, first.1),
            sum: (first.0 + first.1, first.0 + first.1),
        };
        for c in it {
            for (axis, range) in [(CellAxis::N1, &mut hull.n1), (CellAxis::N2, &mut hull.n2), (CellAxis::Sum, &mut hull.sum)] {
                let x = axis.value(*c);
                range.0 = range.0.min(x);
                range.1 = range.1.max(x);
            }
        }
        Some(hull)
    }

    pub fn range(&self, axis: CellAxis) -> (i32, i32) {
        match axis {
            CellAxis::N1 => self.n1,
            CellAxis::N2 => self.n2,
            CellAxis::Sum => self.sum,
        }
    }

    pub fn contains(&self, c: Cell) -> bool {
        CellAxis::ALL.iter().all(|&a| {
            let (lo, hi) = self.range(a);
            (lo..=hi).contains(&a.value(c))
        })
    }

    pub fn halfspaces(&self) -> Vec<HalfSpace> {
        CellAxis::ALL
            .iter()
            .flat_map(|&a| {
                let (lo, hi) = self.range(a);
                [HalfSpace::bound(a, HalfSign::Plus, lo), HalfSpace::bound(a, HalfSign::Minus, hi)]
            })
            .collect()
    }

    pub fn cells(&self) -> BTreeSet<Cell> {
        (self.n1.0..=self.n1.1)
            .flat_map(|a| (self.n2.0..=self.n2.1).map(move |b| (a, b)))
            .filter(|&c| self.contains(c))
            .collect()
    }
}

/// A finite intersection of half-spaces, with its cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    pub halfspaces: Vec<HalfSpace>,
    pub cells: BTreeSet<Cell>,
}

impl ConvexPolygon {
    pub fn from_halfspaces(halfspaces: Vec<HalfSpace>) -> Result<Self> {
        let mut lo: BTreeMap<CellAxis, i32> = BTreeMap::new();
        let mut hi: BTreeMap<CellAxis, i32> = BTreeMap::new();
        for h in &halfspaces {
            let (axis, l, u) = h.axis_bound();
            if let Some(l) = l {
                let e = lo.entry(axis).or_insert(l);
                *e = (*e).max(l);
            }
            if let Some(u) = u {
                let e = hi.entry(axis).or_insert(u);
                *e = (*e).min(u);
            }
        }
        let get = |m: &BTreeMap<CellAxis, i32>, a| m.get(&a).copied();
        // n1 = sum − n2 and n2 = sum − n1 close the box when one axis is left open.
        let n1 = (
            get(&lo, CellAxis::N1).or_else(|| Some(get(&lo, CellAxis::Sum)? - get(&hi, CellAxis::N2)?)),
            get(&hi, CellAxis::N1).or_else(|| Some(get(&hi, CellAxis::Sum)? - get(&lo, CellAxis::N2)?)),
        );
        let n2 = (
            get(&lo, CellAxis::N2).or_else(|| Some(get(&lo, CellAxis::Sum)? - get(&hi, CellAxis::N1)?)),
            get(&hi, CellAxis::N2).or_else(|| Some(get(&hi, CellAxis::Sum)? - get(&lo, CellAxis::N1)?)),
        );
        let (Some(a0), Some(a1), Some(b0), Some(b1)) = (n1.0, n1.1, n2.0, n2.1) else {
            return Err(Error::Geometry("half-spaces do not bound a finite polygon".into()));
        };
        if [a0, a1, b0, b1].iter().any(|x| x.abs() > CELL_SEARCH) {
            return Err(Error::Geometry(format!("polygon exceeds the cell search range ±{CELL_SEARCH}")));
        }
        let cells: BTreeSet<Cell> = (a0..=a1)
            .flat_map(|a| (b0..=b1).map(move |b| (a, b)))
            .filter(|&c| halfspaces.iter().all(|h| h.contains(c)))
            .collect();
        if cells.is_empty() {
            return Err(Error::Empty("polygon"));
        }
        Ok(ConvexPolygon { halfspaces, cells })
    }

    pub fn from_hull(hull: HexHull) -> Result<Self> {
        Self::from_halfspaces(hull.halfspaces())
    }

    /// Cells within hex distance `n` of `centre`; `n = 0` is a single hexagon.
    pub fn honeycomb(centre: Cell, n: i32) -> Result<Self> {
        let s = centre.0 + centre.1;
        Self::from_hull(HexHull {
            n1: (centre.0 - n, centre.0 + n),
            n2: (centre.1 - n, centre.1 + n),
            sum: (s - n, s + n),
        })
    }

    /// Cells `origin + (a, b)` with `0 ≤ a ≤ w`, `0 ≤ b ≤ h`.
    pub fn parallelogram(origin: Cell, w: i32, h: i32) -> Result<Self> {
        Self::from_halfspaces(vec![
            HalfSpace::bound(CellAxis::N1, HalfSign::Plus, origin.0),
            HalfSpace::bound(CellAxis::N1, HalfSign::Minus, origin.0 + w),
            HalfSpace::bound(CellAxis::N2, HalfSign::Plus, origin.1),
            HalfSpace::bound(CellAxis::N2, HalfSign::Minus, origin.1 + h),
        ])
    }

    /// Three mutually adjacent cells `c`, `c + (1, 0)`, `c + (0, 1)`.
    pub fn triangle(corner: Cell) -> Result<Self> {
        let s = corner.0 + corner.1;
        Self::from_halfspaces(vec![
            HalfSpace::bound(CellAxis::N1, HalfSign::Plus, corner.0),
            HalfSpace::bound(CellAxis::N2, HalfSign::Plus, corner.1),
            HalfSpace::bound(CellAxis::Sum, HalfSign::Minus, s + 1),
        ])
    }

    pub fn hull(&self) -> HexHull {
        HexHull::of_cells(&self.cells).expect("polygons are nonempty")
    }

    /// Every vertex on some cell of the polygon, with the number of its cells inside.
    pub fn vertex_cell_counts(&self) -> BTreeMap<VertexId, usize> {
        let mut out = BTreeMap::new();
        for &(a, b) in &self.cells {
            for v in hexagon_ring(a, b) {
                out.entry(v).or_insert_with(|| cells_of_hex_vertex(v).iter().filter(|c| self.cells.contains(c)).count());
            }
        }
        out
    }

    /// The open interior: vertices whose three cells all lie in the polygon.
    pub fn interior_vertices(&self) -> BTreeSet<VertexId> {
        self.vertex_cell_counts().into_iter().filter(|&(_, n)| n == 3).map(|(v, _)| v).collect()
    }

    /// Perimeter vertices with their inner angle.
    pub fn perimeter(&self) -> BTreeMap<VertexId, InnerAngle> {
        self.vertex_cell_counts()
            .into_iter()
            .filter_map(|(v, n)| match n {
                1 => Some((v, InnerAngle::TwoThirdsPi)),
                2 => Some((v, InnerAngle::FourThirdsPi)),
                _ => None,
            })
            .collect()
    }

    fn lattice_window(&self) -> Result<LatticeGraph> {
        let h = self.hull();
        build_lattice(LatticeKind::Hexagonal, CellWindow::new((h.n1.0 - 3, h.n1.1 + 3), (h.n2.0 - 3, h.n2.1 + 3)))
    }

    /// The polygon with boundary: every edge on its cells plus a pendant edge at each vertex of
    /// inner angle `2π/3`, unit conductances.
    pub fn network_with_boundary(&self) -> Result<ConductanceNetwork> {
        let graph = self.lattice_window()?;
        let inside: BTreeSet<VertexId> = self.vertex_cell_counts().into_keys().collect();
        let region = close_region(&graph, &inside)?;
        Ok(ConductanceNetwork::from_region(&graph, &region)?.0)
    }

    /// Peripheral edges only, with the pendant edges of [`Self::network_with_boundary`].
    pub fn outer_wall(&self) -> Result<ConductanceNetwork> {
        let graph = self.lattice_window()?;
        let counts = self.vertex_cell_counts();
        let mut edges: BTreeSet<(VertexId, VertexId)> = BTreeSet::new();
        for &(a, b) in &self.cells {
            let ring = hexagon_ring(a, b);
            for i in 0..6 {
                let (v, w) = (ring[i], ring[(i + 1) % 6]);
                let shared = cells_of_hex_vertex(v)
                    .into_iter()
                    .filter(|c| cells_of_hex_vertex(w).contains(c) && self.cells.contains(c))
                    .count();
                if shared == 1 {
                    edges.insert((v.min(w), v.max(w)));
                }
            }
        }
        let mut pendants = Vec::new();
        for (&v, &n) in &counts {
            if n == 1 {
                for &w in graph.neighbors(v)? {
                    if !counts.contains_key(&w) {
                        pendants.push((v, w));
                    }
                }
            }
        }
        let mut all: BTreeSet<VertexId> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
        all.extend(pendants.iter().map(|p| p.1));
        let label: BTreeMap<VertexId, u32> = all.iter().enumerate().map(|(i, v)| (*v, i as u32)).collect();
        let positions: BTreeMap<u32, [f64; 2]> = all.iter().map(|v| (label[v], graph.position(*v))).collect();
        let mut net_edges: Vec<NetworkEdge> =
            edges.iter().map(|(a, b)| NetworkEdge { a: label[a], b: label[b], gamma: 1.0 }).collect();
        net_edges.extend(pendants.iter().map(|(a, b)| NetworkEdge { a: label[a], b: label[b], gamma: 1.0 }));
        let centre = {
            let n = positions.len() as f64;
            positions.values().fold([0.0, 0.0], |acc, p| [acc[0] + p[0] / n, acc[1] + p[1] / n])
        };
        let mut boundary: Vec<u32> = pendants.iter().map(|p| label[&p.1]).collect();
        boundary.sort_by(|a, b| {
            let ang = |x: &u32| (positions[x][1] - centre[1]).atan2(positions[x][0] - centre[0]);
            ang(a).total_cmp(&ang(b))
        });
        boundary.dedup();
        ConductanceNetwork::new(boundary, net_edges, [], positions)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InnerAngle {
    TwoThirdsPi,
    FourThirdsPi,
}

/// A union of pairwise disjoint, non-adjacent convex polygons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygonDefect {
    pub components: Vec<ConvexPolygon>,
}

impl ConvexPolygonDefect {
    pub fn new(components: Vec<ConvexPolygon>) -> Result<Self> {
        for (i, a) in components.iter().enumerate() {
            let va: BTreeSet<VertexId> = a.vertex_cell_counts().into_keys().collect();
            for b in &components[i + 1..] {
                for v in b.vertex_cell_counts().into_keys() {
                    let touching = va.contains(&v)
                        || LatticeKind::Hexagonal.lattice_neighbors(v)?.iter().any(|w| va.contains(w));
                    if touching {
                        return Err(Error::Geometry(format!("defect components meet or are adjacent at {v}")));
                    }
                }
            }
        }
        Ok(ConvexPolygonDefect { components })
    }

    pub fn empty() -> Self {
        ConvexPolygonDefect::default()
    }

    pub fn single(polygon: ConvexPolygon) -> Self {
        ConvexPolygonDefect { components: vec![polygon] }
    }

    /// The six vertices of the hexagon at `cell` removed: the hole of the honeycomb of radius 1
    /// around it, whose open interior is exactly that ring.
    pub fn hexagon_hole(cell: Cell) -> Result<Self> {
        Ok(Self::single(ConvexPolygon::honeycomb(cell, 1)?))
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn cells(&self) -> BTreeSet<Cell> {
        self.components.iter().flat_map(|c| c.cells.iter().copied()).collect()
    }

    pub fn removed_vertices(&self) -> BTreeSet<VertexId> {
        self.components.iter().flat_map(|c| c.interior_vertices()).collect()
    }

    pub fn perimeter(&self) -> BTreeMap<VertexId, InnerAngle> {
        self.components.iter().flat_map(|c| c.perimeter()).collect()
    }

    /// The hexagonal convex hull `C(D)`.
    pub fn hull(&self) -> Option<HexHull> {
        HexHull::of_cells(&self.cells())
    }

    /// The image under the point reflection of the side-`n` parallelogram.
    pub fn rotated(&self, n: usize) -> Result<Self> {
        let n = n as i32;
        let components = self
            .components
            .iter()
            .map(|c| {
                let hull = c.hull();
                let flip = |(lo, hi): (i32, i32), m: i32| (m - hi, m - lo);
                ConvexPolygon::from_hull(HexHull { n1: flip(hull.n1, n), n2: flip(hull.n2, n), sum: flip(hull.sum, 2 * n) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConvexPolygonDefect { components })
    }
}

/// A perimeter vertex of the hole with its degree in `V_def`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HoleVertex {
    pub vertex: VertexId,
    pub degree: usize,
    pub angle: InnerAngle,
}

/// `V_def = V_0,int \ D°` next to `V_0,int`, sharing the boundary `Σ`.
#[derive(Clone, Debug)]
pub struct DefectRegions {
    pub graph: LatticeGraph,
    pub defect: Region,
    pub free: Region,
    pub removed: BTreeSet<VertexId>,
    pub hole_boundary: Vec<HoleVertex>,
}

pub fn build_defect_region(par: &HexParallelogram, defect: &ConvexPolygonDefect) -> Result<DefectRegions> {
    let n = par.size() as i32;
    for c in defect.cells() {
        if c.0 < 1 || c.1 < 1 || c.0 > n - 1 || c.1 > n - 1 {
            return Err(Error::Geometry(format!("defect cell {c:?} lies within one cell of the boundary")));
        }
    }
    let removed = defect.removed_vertices();
    let list: Vec<VertexId> = removed.iter().copied().collect();
    let graph = par.graph().delete_vertices(&list)?.graph;
    let interior: BTreeSet<VertexId> =
        par.region().interior().iter().copied().filter(|v| !removed.contains(v)).collect();
    let region = close_region(&graph, &interior)?;
    if region.boundary() != par.region().boundary() {
        return Err(Error::Geometry("the hole changes the outer boundary".into()));
    }
    let hole_boundary = defect
        .perimeter()
        .into_iter()
        .map(|(v, angle)| Ok(HoleVertex { vertex: v, degree: region.degree(v)?, angle }))
        .collect::<Result<Vec<_>>>()?;
    Ok(DefectRegions { graph, defect: region, free: par.region().clone(), removed, hole_boundary })
}

impl DefectRegions {
    /// Whether `λ` is nonzero and regular for both Dirichlet problems.
    pub fn admits(&self, lambda: f64) -> Result<bool> {
        let zero = Potential::zero();
        Ok(lambda != 0.0 && is_regular(&self.free, &zero, lambda)? && is_regular(&self.defect, &zero, lambda)?)
    }

    /// The first admissible energy of a retry list.
    pub fn select_energy(&self, candidates: &[f64]) -> Result<f64> {
        for &l in candidates {
            if self.admits(l)? {
                return Ok(l);
            }
        }
        Err(Error::ProbeEnergy(candidates.last().copied().unwrap_or(0.0)))
    }

    /// Modified-convention D-N maps `(Λ(H_def), Λ(H_0))` at `λ`.
    pub fn dn_maps<T: Real>(&self, lambda: f64) -> Result<(DnMap<T>, DnMap<T>)> {
        if !self.admits(lambda)? {
            return Err(Error::ProbeEnergy(lambda));
        }
        let zero = Potential::zero();
        Ok((
            dn_map(&self.defect, &zero, lambda, Convention::Modified)?,
            dn_map(&self.free, &zero, lambda, Convention::Modified)?,
        ))
    }
}

/// One of the six sweep directions: a line family, optionally in the point-reflected domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProbeDirection {
    pub family: LineFamily,
    pub rotated: bool,
}

pub const PROBE_DIRECTIONS: [ProbeDirection; 6] = [
    ProbeDirection { family: LineFamily::A, rotated: false },
    ProbeDirection { family: LineFamily::B, rotated: false },
    ProbeDirection { family: LineFamily::Vertical, rotated: false },
    ProbeDirection { family: LineFamily::A, rotated: true },
    ProbeDirection { family: LineFamily::B, rotated: true },
    ProbeDirection { family: LineFamily::Vertical, rotated: true },
];

impl fmt::Display for ProbeDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.family {
            LineFamily::A => "A",
            LineFamily::B => "B",
            LineFamily::Vertical => "X",
        };
        write!(f, "{name}{}", if self.rotated { "'" } else { "" })
    }
}

impl ProbeDirection {
    /// The hull bound fixed by the touching index `m` in this direction.
    pub fn bound(&self, n: usize, m: usize) -> HalfSpace {
        let (n, m) = (n as i32, m as i32);
        let axis = match self.family {
            LineFamily::A => CellAxis::Sum,
            LineFamily::B => CellAxis::N2,
            LineFamily::Vertical => CellAxis::N1,
        };
        let top = if axis == CellAxis::Sum { m + n } else { m };
        if self.rotated {
            let full = if axis == CellAxis::Sum { 2 * n } else { n };
            HalfSpace::bound(axis, HalfSign::Plus, full - top)
        } else {
            HalfSpace::bound(axis, HalfSign::Minus, top)
        }
    }
}

/// A D-N map viewed in the point-reflected domain, kept in the original boundary order.
fn oriented<T: Real>(par: &HexParallelogram, dn: &DnMap<T>, rotated: bool) -> DnMap<T> {
    if !rotated {
        return dn.clone();
    }
    let mut out = dn.permuted(&par.boundary_rotation());
    out.boundary = dn.boundary.clone();
    out
}

/// The Σ-trace `f_k` of the unperturbed probing solution for line `k`, by a direct solve; in
/// the reflected domain when the direction is rotated.
pub fn probing_data(par: &HexParallelogram, direction: ProbeDirection, k: usize, lambda: f64) -> Result<Vec<f64>> {
    if lambda == 0.0 || !is_regular(par.region(), &Potential::zero(), lambda)? {
        return Err(Error::ProbeEnergy(lambda));
    }
    let zero = Potential::zero();
    let sol = probe_solution::<f64>(par, ProbeSource::Forward { potential: &zero, lambda }, direction.family, k)?;
    Ok(sol.boundary_data)
}

/// `f_k` from `Λ(H_0)` alone, by completing the partial data.
pub fn probing_data_from_dn<T: Real>(
    par: &HexParallelogram,
    dn_free: &DnMap<T>,
    direction: ProbeDirection,
    k: usize,
) -> Result<Vec<T>> {
    let data = probe_data(par, direction.family, k)?;
    complete_probe(par, &oriented(par, dn_free, direction.rotated), &data)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LineCheck {
    pub index: usize,
    /// `‖Λ(H_def) f_k − Λ(H_0) f_k‖∞`.
    pub difference: f64,
    /// `‖f_k‖∞`.
    pub scale: f64,
    pub equal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub direction: ProbeDirection,
    /// Largest line index meeting the defect, one above the first unequal line.
    pub m: Option<usize>,
    pub checks: Vec<LineCheck>,
    /// Relative difference at `m − 1`.
    pub margin: Option<f64>,
}

/// Sweep the lines of one direction downwards until `Λ(H_def) f_k ≠ Λ(H_0) f_k`.
pub fn detect_line<T: Real>(
    par: &HexParallelogram,
    dn_def: &DnMap<T>,
    dn_free: &DnMap<T>,
    direction: ProbeDirection,
    lambda: f64,
) -> Result<ProbeReport> {
    if lambda == 0.0 {
        return Err(Error::ProbeEnergy(lambda));
    }
    if dn_def.lambda != lambda || dn_free.lambda != lambda {
        return Err(Error::Geometry(format!("D-N maps were computed at {} and {}, not {lambda}", dn_def.lambda, dn_free.lambda)));
    }
    if dn_def.boundary != dn_free.boundary || dn_free.boundary != par.region().boundary() {
        return Err(Error::Geometry("D-N maps do not share the parallelogram boundary".into()));
    }
    let def = oriented(par, dn_def, direction.rotated);
    let free = oriented(par, dn_free, direction.rotated);
    let mut checks = Vec::new();
    let mut m = None;
    let mut margin = None;
    for k in (0..=par.size()).rev() {
        let f = complete_probe(par, &free, &probe_data(par, direction.family, k)?)?;
        let (gd, g0) = (def.apply(&f), free.apply(&f));
        let difference = gd.iter().zip(&g0).map(|(a, b)| (*a - *b).to_f64().abs()).fold(0.0, f64::max);
        let scale = f.iter().map(|x| x.to_f64().abs()).fold(0.0, f64::max);
        let equal = difference <= EQUALITY_TOLERANCE * scale;
        checks.push(LineCheck { index: k, difference, scale, equal });
        if !equal {
            m = Some(k + 1);
            margin = Some(difference / scale);
            break;
        }
    }
    Ok(ProbeReport { direction, m, checks, margin })
}

/// Geometric index: the largest line of the direction meeting a cell of the defect.
pub fn touching_index(par: &HexParallelogram, direction: ProbeDirection, defect: &ConvexPolygonDefect) -> Result<Option<usize>> {
    let d = if direction.rotated { defect.rotated(par.size())? } else { defect.clone() };
    let cells = d.cells();
    let (level, line): (fn(VertexId) -> i64, Box<dyn Fn(usize) -> i64>) = match direction.family {
        LineFamily::A => (level_a, Box::new(|k| par.a_level(k))),
        LineFamily::B => (level_m, Box::new(|k| par.b_level(k))),
        LineFamily::Vertical => (level_x, Box::new(|k| par.x_level(k))),
    };
    let ranges: Vec<(i64, i64)> = cells
        .iter()
        .map(|&(a, b)| {
            let levels = hexagon_ring(a, b).map(level);
            (*levels.iter().min().expect("six"), *levels.iter().max().expect("six"))
        })
        .collect();
    Ok((0..=par.size()).rev().find(|&k| {
        let l = line(k);
        ranges.iter().any(|&(lo, hi)| lo <= l && l <= hi)
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HullReport {
    pub reports: Vec<ProbeReport>,
    /// Supporting half-spaces found, one per conclusive direction.
    pub halfspaces: Vec<HalfSpace>,
    pub inconclusive: Vec<ProbeDirection>,
    /// The full hull when all six directions were conclusive.
    pub hull: Option<HexHull>,
}

/// The hexagonal convex hull of the defect from the two D-N maps, one sweep per direction.
pub fn convex_hull_of_defect<T: Real>(
    par: &HexParallelogram,
    dn_def: &DnMap<T>,
    dn_free: &DnMap<T>,
    lambda: f64,
) -> Result<HullReport> {
    let mut reports = Vec::new();
    let mut halfspaces = Vec::new();
    let mut inconclusive = Vec::new();
    for direction in PROBE_DIRECTIONS {
        let report = detect_line(par, dn_def, dn_free, direction, lambda)?;
        match report.m {
            Some(m) if m >= 1 => halfspaces.push(direction.bound(par.size(), m)),
            _ => inconclusive.push(direction),
        }
        reports.push(report);
    }
    let hull = if inconclusive.is_empty() {
        let mut h = HexHull { n1: (i32::MIN, i32::MAX), n2: (i32::MIN, i32::MAX), sum: (i32::MIN, i32::MAX) };
        for hs in &halfspaces {
            let (axis, lo, hi) = hs.axis_bound();
            let r = match axis {
                CellAxis::N1 => &mut h.n1,
                CellAxis::N2 => &mut h.n2,
                CellAxis::Sum => &mut h.sum,
            };
            if let Some(lo) = lo {
                r.0 = r.0.max(lo);
            }
            if let Some(hi) = hi {
                r.1 = r.1.min(hi);
            }
        }
        Some(h)
    } else {
        None
    };
    Ok(HullReport { reports, halfspaces, inconclusive, hull })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halfspace_families_share_three_forms() {
        let c = (2, -3);
        let cases = [((1, 2), 2), ((3, 2), -2), ((2, 1), -3), ((3, 1), -3), ((1, 3), -1), ((2, 3), -1)];
        for ((i, j), m) in cases {
            let h = HalfSpace::new(i, j, m, HalfSign::Plus).unwrap();
            assert!(h.contains(c));
            assert!(!HalfSpace::new(i, j, m + 1, HalfSign::Plus).unwrap().contains(c));
            assert!(HalfSpace::new(i, j, m, HalfSign::Minus).unwrap().contains(c));
        }
        assert!(HalfSpace::new(2, 2, 0, HalfSign::Plus).is_err());
    }

    #[test]
    fn honeycomb_counts() {
        for n in 0..4 {
            let p = ConvexPolygon::honeycomb((5, 5), n).unwrap();
            assert_eq!(p.cells.len() as i32, 3 * n * n + 3 * n + 1);
            assert!(p.cells.iter().all(|&c| hex_distance(c, (5, 5)) <= n));
        }
        let one = ConvexPolygon::honeycomb((0, 0), 1).unwrap();
        assert_eq!(one.interior_vertices(), hexagon_ring(0, 0).into_iter().collect());
        let per = one.perimeter();
        assert_eq!(per.len(), 18);
        assert_eq!(per.values().filter(|a| **a == InnerAngle::FourThirdsPi).count(), 6);
        assert!(ConvexPolygon::honeycomb((0, 0), 0).unwrap().interior_vertices().is_empty());
    }

    #[test]
    fn unbounded_halfspaces_are_rejected() {
        let hs = vec![HalfSpace::bound(CellAxis::N1, HalfSign::Plus, 0), HalfSpace::bound(CellAxis::N1, HalfSign::Minus, 3)];
        assert!(ConvexPolygon::from_halfspaces(hs).is_err());
        let tri = ConvexPolygon::triangle((1, 1)).unwrap();
        assert_eq!(tri.cells.len(), 3);
        assert_eq!(tri.interior_vertices().len(), 1);
    }

    #[test]
    fn bounds_invert_the_geometric_index() {
        let par = HexParallelogram::new(6).unwrap();
        for a in 1..=5 {
            for b in 1..=5 {
                let d = ConvexPolygonDefect::single(ConvexPolygon::honeycomb((a, b), 0).unwrap());
                for dir in PROBE_DIRECTIONS {
                    let Some(m) = touching_index(&par, dir, &d).unwrap() else { continue };
                    let h = dir.bound(6, m);
                    let (axis, lo, hi) = h.axis_bound();
                    let v = axis.value((a, b));
                    assert_eq!(lo.or(hi), Some(v), "{dir} at {:?}", (a, b));
                }
            }
        }
    }

    #[test]
    fn rotation_maps_cells_through_the_centre() {
        let d = ConvexPolygonDefect::single(ConvexPolygon::parallelogram((1, 2), 1, 0).unwrap());
        let r = d.rotated(6).unwrap();
        assert_eq!(r.cells(), BTreeSet::from([(4, 4), (5, 4)]));
    }

    #[test]
    fn hole_boundary_types() {
        let par = HexParallelogram::new(6).unwrap();
        let regions = build_defect_region(&par, &ConvexPolygonDefect::single(ConvexPolygon::honeycomb((3, 3), 1).unwrap())).unwrap();
        assert_eq!(regions.removed.len(), 6);
        assert_eq!(regions.hole_boundary.len(), 18);
        for h in &regions.hole_boundary {
            let want = if h.angle == InnerAngle::TwoThirdsPi { 3 } else { 2 };
            assert_eq!(h.degree, want);
        }
        let none = build_defect_region(&par, &ConvexPolygonDefect::empty()).unwrap();
        assert_eq!(none.defect, none.free);
        assert!(build_defect_region(&par, &ConvexPolygonDefect::hexagon_hole((1, 3)).unwrap()).is_err());
    }
}

//! The hexagonal parallelogram of side `N`: interior, boundary sides and diagonal line levels.
//!
//! Line levels use the integers `a(v) = x1 + √3 x2` and `m(v) = x1 − √3 x2` of the vertex
//! position, which are exact for every hexagonal vertex: for `s = n1 + n2`,
//! `a = 3s − 1` on sublattice 1 and `3s + 1` on sublattice 2; `m = 2 − 3 n2` and `1 − 3 n2`.

use crate::error::{Error, Result};
use crate::lattice::{build_lattice, hexagon_ring, CellWindow, LatticeGraph, LatticeKind, VertexId};
use crate::region::{close_region, Region};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

#[derive(Clone, Debug)]
pub struct HexParallelogram {
    n: usize,
    graph: LatticeGraph,
    region: Region,
    top: Vec<VertexId>,
    bottom: Vec<VertexId>,
    left: Vec<VertexId>,
    right: Vec<VertexId>,
}

/// `x1 + √3 x2` of the vertex position.
pub fn level_a(v: VertexId) -> i64 {
    let s = 3 * (v.n1 as i64 + v.n2 as i64);
    if v.sub == 1 {
        s - 1
    } else {
        s + 1
    }
}

/// `x1 − √3 x2` of the vertex position.
pub fn level_m(v: VertexId) -> i64 {
    let t = -3 * v.n2 as i64;
    if v.sub == 1 {
        t + 2
    } else {
        t + 1
    }
}

/// `2 x1` of the vertex position.
pub fn level_x(v: VertexId) -> i64 {
    level_a(v) + level_m(v)
}

/// Interior vertices of the parallelogram: all hexagon rings of cells `0 ≤ n1, n2 ≤ N`.
pub fn parallelogram_interior(n: usize) -> BTreeSet<VertexId> {
    let n = n as i32;
    let mut set = BTreeSet::new();
    for a in 0..=n {
        for b in 0..=n {
            set.extend(hexagon_ring(a, b));
        }
    }
    set
}

impl HexParallelogram {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Geometry("parallelogram size must be at least 1".into()));
        }
        let size = n as i32;
        let graph = build_lattice(LatticeKind::Hexagonal, CellWindow::new((-3, size + 2), (-2, size + 3)))?;
        let region = close_region(&graph, &parallelogram_interior(n))?;
        let top = (0..=size).map(|k| VertexId::new(1, k - 1, size + 2)).collect();
        let bottom = (0..=size).map(|k| VertexId::new(2, k, -1)).collect();
        let mut right: Vec<VertexId> = (0..=size).map(|k| VertexId::new(1, size + 1, k)).collect();
        right.push(VertexId::new(2, size, size + 1));
        let mut left = vec![VertexId::new(1, -1, 0)];
        left.extend((0..=size).map(|k| VertexId::new(2, -2, k + 1)));
        let par = HexParallelogram { n, graph, region, top, bottom, left, right };
        par.check_partition()?;
        Ok(par)
    }

    fn check_partition(&self) -> Result<()> {
        let mut all = BTreeSet::new();
        for v in self.top.iter().chain(&self.bottom).chain(&self.left).chain(&self.right) {
            if !self.region.is_boundary(*v) || !all.insert(*v) {
                return Err(Error::Geometry(format!("side lists do not partition the boundary at {v}")));
            }
        }
        if all.len() != self.region.boundary().len() {
            return Err(Error::Geometry("side lists miss boundary vertices".into()));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn graph(&self) -> &LatticeGraph {
        &self.graph
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    /// `α_0, …, α_N`, left to right.
    pub fn top(&self) -> &[VertexId] {
        &self.top
    }

    pub fn bottom(&self) -> &[VertexId] {
        &self.bottom
    }

    /// The corner `2ω⁴` followed by `β_0, …, β_N`.
    pub fn left(&self) -> &[VertexId] {
        &self.left
    }

    /// Bottom to top, ending with the top-right corner.
    pub fn right(&self) -> &[VertexId] {
        &self.right
    }

    pub fn side(&self, side: Side) -> &[VertexId] {
        match side {
            Side::Top => &self.top,
            Side::Bottom => &self.bottom,
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn side_of(&self, v: VertexId) -> Option<Side> {
        [Side::Top, Side::Bottom, Side::Left, Side::Right].into_iter().find(|&s| self.side(s).contains(&v))
    }

    /// `β_ℓ = −2 + ℓ√3 i`.
    pub fn beta(&self, l: usize) -> VertexId {
        self.left[l + 1]
    }

    /// `α_k`.
    pub fn alpha(&self, k: usize) -> VertexId {
        self.top[k]
    }

    /// Level `a_k` of the line `A_k` through `α_k`.
    pub fn a_level(&self, k: usize) -> i64 {
        level_a(self.alpha(k))
    }

    /// Level `b_ℓ` of the line `B_ℓ` through `β_ℓ`.
    pub fn b_level(&self, l: usize) -> i64 {
        level_m(self.beta(l))
    }

    /// Level `2 x1` of the vertical line through the `j`-th bottom vertex.
    pub fn x_level(&self, j: usize) -> i64 {
        level_x(self.bottom[j])
    }

    /// Vertices of `D` on `A_k`, ordered by decreasing `x2` (from `α_k` downwards).
    pub fn line_a(&self, k: usize) -> Vec<VertexId> {
        let a = self.a_level(k);
        let mut on: Vec<VertexId> = self.all_vertices().filter(|&v| level_a(v) == a).collect();
        on.sort_by_key(|v| std::cmp::Reverse(level_a(*v) - level_m(*v)));
        on
    }

    /// Vertices of `D` on `B_ℓ`, ordered by increasing `x1` (from `β_ℓ` rightwards).
    pub fn line_b(&self, l: usize) -> Vec<VertexId> {
        let b = self.b_level(l);
        let mut on: Vec<VertexId> = self.all_vertices().filter(|&v| level_m(v) == b).collect();
        on.sort_by_key(|v| level_a(*v) + level_m(*v));
        on
    }

    pub fn all_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.region.interior().iter().chain(self.region.boundary()).copied()
    }

    /// The point reflection through the parallelogram's centre, which maps it onto itself.
    pub fn rotate(&self, v: VertexId) -> VertexId {
        let n = self.n as i32;
        VertexId::new(3 - v.sub, n - 1 - v.n1, n + 1 - v.n2)
    }

    /// `perm[i]` is the boundary position of the image of boundary vertex `i`.
    pub fn boundary_rotation(&self) -> Vec<usize> {
        self.region
            .boundary()
            .iter()
            .map(|&v| self.region.boundary_position(self.rotate(v)).expect("rotation preserves the boundary"))
            .collect()
    }

    /// Positions of the listed vertices in the boundary order.
    pub fn boundary_indices(&self, vs: &[VertexId]) -> Result<Vec<usize>> {
        vs.iter().map(|&v| self.region.boundary_position(v).ok_or(Error::NotBoundary(v))).collect()
    }

    /// The cells `(n1, n2)` of the parallelogram.
    pub fn cells(&self) -> Vec<(i32, i32)> {
        let n = self.n as i32;
        (0..=n).flat_map(|a| (0..=n).map(move |b| (a, b))).collect()
    }

    /// Boundary sides keyed by vertex, for dumps.
    pub fn side_map(&self) -> BTreeMap<VertexId, Side> {
        self.region.boundary().iter().map(|&v| (v, self.side_of(v).expect("partitioned"))).collect()
    }
}

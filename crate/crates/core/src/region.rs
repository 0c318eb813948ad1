//! Finite regions `D = Ω ∪ Ω'`, grid functions, the averaging Laplacian, the normal
//! derivative and the weighted inner products entering Green's formula.

use crate::error::{Error, Result};
use crate::lattice::{LatticeGraph, VertexId};
use num_complex::Complex64;
use std::collections::{BTreeMap, BTreeSet};

pub type GridFunction = BTreeMap<VertexId, Complex64>;

/// Which degree weights the boundary inner product carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryWeight {
    /// `deg_D(v)`: the number of interior neighbours.
    RegionDegree,
    /// Every boundary vertex weighted by 1.
    Unit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    interior: Vec<VertexId>,
    boundary: Vec<VertexId>,
    deg: BTreeMap<VertexId, usize>,
    /// All neighbours for interior vertices, interior neighbours for boundary vertices.
    nbrs: BTreeMap<VertexId, Vec<VertexId>>,
    interior_index: BTreeMap<VertexId, usize>,
    boundary_index: BTreeMap<VertexId, usize>,
}

pub fn close_region(g: &LatticeGraph, omega: &BTreeSet<VertexId>) -> Result<Region> {
    if omega.is_empty() {
        return Err(Error::Empty("interior set"));
    }
    for &v in omega {
        if !g.contains(v) {
            return Err(Error::MissingVertex(v));
        }
        if g.is_border(v) {
            return Err(Error::TruncatedRegion(v));
        }
    }
    if !g.is_connected_set(omega) {
        return Err(Error::Disconnected);
    }
    let mut boundary_nbrs: BTreeMap<VertexId, Vec<VertexId>> = BTreeMap::new();
    let mut nbrs = BTreeMap::new();
    let mut deg = BTreeMap::new();
    for &v in omega {
        let all: Vec<VertexId> = g.neighbors(v)?.iter().copied().collect();
        for &w in &all {
            if !omega.contains(&w) {
                boundary_nbrs.entry(w).or_default().push(v);
            }
        }
        deg.insert(v, all.len());
        nbrs.insert(v, all);
    }
    for (w, list) in boundary_nbrs {
        deg.insert(w, list.len());
        nbrs.insert(w, list);
    }
    let interior: Vec<VertexId> = omega.iter().copied().collect();
    let boundary: Vec<VertexId> =
        nbrs.keys().copied().filter(|v| !omega.contains(v)).collect();
    Ok(Region::assemble(interior, boundary, deg, nbrs))
}

impl Region {
    fn assemble(
        interior: Vec<VertexId>,
        boundary: Vec<VertexId>,
        deg: BTreeMap<VertexId, usize>,
        nbrs: BTreeMap<VertexId, Vec<VertexId>>,
    ) -> Self {
        let interior_index = interior.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let boundary_index = boundary.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        Region { interior, boundary, deg, nbrs, interior_index, boundary_index }
    }

    pub fn interior(&self) -> &[VertexId] {
        &self.interior
    }

    pub fn boundary(&self) -> &[VertexId] {
        &self.boundary
    }

    pub fn is_interior(&self, v: VertexId) -> bool {
        self.interior_index.contains_key(&v)
    }

    pub fn is_boundary(&self, v: VertexId) -> bool {
        self.boundary_index.contains_key(&v)
    }

    pub fn interior_position(&self, v: VertexId) -> Option<usize> {
        self.interior_index.get(&v).copied()
    }

    pub fn boundary_position(&self, v: VertexId) -> Option<usize> {
        self.boundary_index.get(&v).copied()
    }

    /// `deg_D(v)`: neighbours in `D` for interior `v`, interior neighbours for boundary `v`.
    pub fn degree(&self, v: VertexId) -> Result<usize> {
        self.deg.get(&v).copied().ok_or(Error::MissingVertex(v))
    }

    pub fn neighbors(&self, v: VertexId) -> Result<&[VertexId]> {
        self.nbrs.get(&v).map(|n| n.as_slice()).ok_or(Error::MissingVertex(v))
    }

    pub fn vertex_count(&self) -> usize {
        self.interior.len() + self.boundary.len()
    }

    /// `(Δu)(v) = (1/deg v) Σ_{w~v} u(w)` at every interior vertex.
    pub fn laplacian(&self, u: &GridFunction) -> Result<GridFunction> {
        let mut out = GridFunction::new();
        for &v in &self.interior {
            let nbrs = &self.nbrs[&v];
            let mut acc = Complex64::new(0.0, 0.0);
            for w in nbrs {
                acc += *u.get(w).ok_or(Error::MissingValue(*w))?;
            }
            out.insert(v, acc / nbrs.len() as f64);
        }
        Ok(out)
    }

    /// `(∂_ν u)(v) = -(1/deg_D v) Σ_{w∈Ω, w~v} u(w)` on the boundary; values of `u` off `Ω` are ignored.
    pub fn normal_derivative(&self, u: &GridFunction) -> Result<GridFunction> {
        let mut out = GridFunction::new();
        for &v in &self.boundary {
            out.insert(v, self.normal_derivative_at(u, v)?);
        }
        Ok(out)
    }

    pub fn normal_derivative_at(&self, u: &GridFunction, v: VertexId) -> Result<Complex64> {
        if !self.is_boundary(v) {
            return Err(Error::NotBoundary(v));
        }
        let nbrs = &self.nbrs[&v];
        let mut acc = Complex64::new(0.0, 0.0);
        for w in nbrs {
            acc += *u.get(w).ok_or(Error::MissingValue(*w))?;
        }
        Ok(-acc / nbrs.len() as f64)
    }

    /// `(f, g)_{ℓ²(Ω)} = Σ f(v) conj(g(v)) deg(v)`.
    pub fn inner_interior(&self, f: &GridFunction, g: &GridFunction) -> Result<Complex64> {
        self.weighted_sum(&self.interior, f, g, true)
    }

    pub fn inner_boundary(&self, f: &GridFunction, g: &GridFunction, weight: BoundaryWeight) -> Result<Complex64> {
        self.weighted_sum(&self.boundary, f, g, weight == BoundaryWeight::RegionDegree)
    }

    /// Weight-free pairing over an explicit vertex list.
    pub fn inner_unweighted(vertices: &[VertexId], f: &GridFunction, g: &GridFunction) -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for v in vertices {
            let a = f.get(v).ok_or(Error::MissingValue(*v))?;
            let b = g.get(v).ok_or(Error::MissingValue(*v))?;
            acc += a * b.conj();
        }
        Ok(acc)
    }

    fn weighted_sum(&self, set: &[VertexId], f: &GridFunction, g: &GridFunction, weighted: bool) -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for v in set {
            let a = f.get(v).ok_or(Error::MissingValue(*v))?;
            let b = g.get(v).ok_or(Error::MissingValue(*v))?;
            let w = if weighted { self.deg[v] as f64 } else { 1.0 };
            acc += a * b.conj() * w;
        }
        Ok(acc)
    }

    /// Both sides of Green's formula for `f`, `g` given on `D`.
    pub fn green_identity_sides(&self, f: &GridFunction, g: &GridFunction) -> Result<(Complex64, Complex64)> {
        let (lf, lg) = (self.laplacian(f)?, self.laplacian(g)?);
        let (nf, ng) = (self.normal_derivative(f)?, self.normal_derivative(g)?);
        let lhs = self.inner_interior(&lf, g)? - self.inner_interior(f, &lg)?;
        let w = BoundaryWeight::RegionDegree;
        let rhs = self.inner_boundary(&nf, g, w)? - self.inner_boundary(f, &ng, w)?;
        Ok((lhs, rhs))
    }
}

/// `(Δu)(v)` on a whole graph at the listed vertices, with the graph's degrees.
pub fn laplacian(g: &LatticeGraph, u: &GridFunction, at: &[VertexId]) -> Result<GridFunction> {
    let mut out = GridFunction::new();
    for &v in at {
        let nbrs = g.neighbors(v)?;
        if nbrs.is_empty() {
            return Err(Error::Geometry(format!("{v} has no neighbours")));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for w in nbrs {
            acc += *u.get(w).ok_or(Error::MissingValue(*w))?;
        }
        out.insert(v, acc / nbrs.len() as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, hexagon_ring, CellWindow, LatticeKind};

    fn hex() -> LatticeGraph {
        build_lattice(LatticeKind::Hexagonal, CellWindow::centered(4)).unwrap()
    }

    #[test]
    fn single_vertex_region() {
        let r = close_region(&hex(), &BTreeSet::from([VertexId::new(1, 0, 0)])).unwrap();
        assert_eq!(r.boundary().len(), 3);
        for &b in r.boundary() {
            assert_eq!(r.degree(b).unwrap(), 1);
        }
        assert_eq!(r.degree(VertexId::new(1, 0, 0)).unwrap(), 3);
    }

    #[test]
    fn hexagon_ring_region_has_six_outward_neighbours() {
        let ring: BTreeSet<_> = hexagon_ring(0, 0).into_iter().collect();
        let r = close_region(&hex(), &ring).unwrap();
        assert_eq!(r.boundary().len(), 6);
        assert!(r.boundary().iter().all(|&b| r.degree(b).unwrap() == 1));
    }

    #[test]
    fn square_block_boundary() {
        let g = build_lattice(LatticeKind::Square, CellWindow::centered(3)).unwrap();
        let omega = [(0, 0), (0, 1), (1, 0), (1, 1)].iter().map(|&(a, b)| VertexId::new(1, a, b)).collect();
        assert_eq!(close_region(&g, &omega).unwrap().boundary().len(), 8);
    }

    #[test]
    fn region_rejects_disconnected_and_truncated_sets() {
        let g = hex();
        let far = BTreeSet::from([VertexId::new(1, 0, 0), VertexId::new(1, 2, 2)]);
        assert_eq!(close_region(&g, &far), Err(Error::Disconnected));
        let edge = BTreeSet::from([VertexId::new(1, -4, 0)]);
        assert!(matches!(close_region(&g, &edge), Err(Error::TruncatedRegion(_))));
        assert_eq!(close_region(&g, &BTreeSet::new()), Err(Error::Empty("interior set")));
    }

    #[test]
    fn constants_and_alternating_signs() {
        let g = build_lattice(LatticeKind::Square, CellWindow::centered(3)).unwrap();
        let omega: BTreeSet<_> = (-1..=1).flat_map(|a| (-1..=1).map(move |b| VertexId::new(1, a, b))).collect();
        let r = close_region(&g, &omega).unwrap();
        let c = Complex64::new(0.7, -0.2);
        let u: GridFunction = g.vertices().map(|v| (v, c)).collect();
        for val in r.laplacian(&u).unwrap().values() {
            assert!((val - c).norm() < 1e-15);
        }
        let alt: GridFunction =
            g.vertices().map(|v| (v, Complex64::new(if (v.n1 + v.n2) % 2 == 0 { 1.0 } else { -1.0 }, 0.0))).collect();
        for (v, val) in r.laplacian(&alt).unwrap() {
            assert!((val + alt[&v]).norm() < 1e-15);
        }
    }

    #[test]
    fn normal_derivative_of_single_neighbour() {
        let r = close_region(&hex(), &BTreeSet::from([VertexId::new(1, 0, 0)])).unwrap();
        let c = Complex64::new(2.5, 1.0);
        let u = GridFunction::from([(VertexId::new(1, 0, 0), c)]);
        for val in r.normal_derivative(&u).unwrap().values() {
            assert!((val + c).norm() < 1e-15);
        }
        assert!(matches!(r.normal_derivative_at(&u, VertexId::new(1, 0, 0)), Err(Error::NotBoundary(_))));
    }
}

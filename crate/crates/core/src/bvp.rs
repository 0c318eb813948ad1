//! Interior Dirichlet problems for `−Δ + V − λ` and their D-N maps.
//!
//! The interior equation is the same in both conventions, since `Δ' + Q = −Δ + V − λ` with
//! `Q = V − λ − 1`. They differ on the boundary rows:
//! * `Standard`: `(Λf)(v) = ∂_ν u(v)`.
//! * `Modified`: `(Λf)(v) = Σ_{w∈Ω, w~v} (f(v) − u(w))`, which is `f + ∂_ν u` when `deg_D(v) = 1`.

use crate::error::{Error, Result};
use crate::lattice::VertexId;
use crate::parallelogram::{HexParallelogram, Side};
use crate::precision::{singular_values, Dense, Lu, Real};
use crate::region::Region;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    Standard,
    Modified,
}

/// Relative smallest singular value below which `H(V₀;V₀)` counts as singular.
pub const REGULARITY_THRESHOLD: f64 = 1e-10;

/// Relative smallest singular value below which a D-N sub-block counts as singular: six digits
/// above the roundoff of `T`, but no finer than an `f64` SVD can resolve.
pub fn block_threshold<T: Real>() -> f64 {
    (1e6 * T::EPSILON).max(1e-13)
}

/// A real potential `V` on a finite vertex set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub values: BTreeMap<VertexId, f64>,
}

impl Potential {
    pub fn new(values: BTreeMap<VertexId, f64>) -> Self {
        Potential { values }
    }

    pub fn zero() -> Self {
        Potential::default()
    }

    /// `V = Q + λ + 1` from a potential given in the modified convention.
    pub fn from_q(q: &BTreeMap<VertexId, f64>, lambda: f64) -> Self {
        Potential { values: q.iter().map(|(v, x)| (*v, x + lambda + 1.0)).collect() }
    }

    pub fn get(&self, v: VertexId) -> f64 {
        self.values.get(&v).copied().unwrap_or(0.0)
    }

    /// `Q(v) = V(v) − λ − 1`, evaluated in `T`.
    pub fn q_at<T: Real>(&self, v: VertexId, lambda: f64) -> T {
        T::from_f64(self.get(v)) - T::from_f64(lambda) - T::one()
    }

    pub fn check_support(&self, region: &Region) -> Result<()> {
        for (&v, &x) in &self.values {
            if x != 0.0 && !region.is_interior(v) {
                return Err(Error::PotentialOutsideInterior(v));
            }
        }
        Ok(())
    }
}

/// The four blocks of `H = D − A + Q` over interior order `V₀` and boundary order `V₁`.
#[derive(Clone, Debug)]
pub struct AssembledSystem<T> {
    pub interior: Vec<VertexId>,
    pub boundary: Vec<VertexId>,
    pub lambda: f64,
    pub convention: Convention,
    pub h00: Dense<T>,
    pub h01: Dense<T>,
    pub h10: Dense<T>,
    pub h11: Dense<T>,
}

pub fn assemble<T: Real>(
    region: &Region,
    potential: &Potential,
    lambda: f64,
    convention: Convention,
) -> Result<AssembledSystem<T>> {
    potential.check_support(region)?;
    let (ni, nb) = (region.interior().len(), region.boundary().len());
    let mut h00 = Dense::zeros(ni, ni);
    let mut h01 = Dense::zeros(ni, nb);
    let mut h10 = Dense::zeros(nb, ni);
    let mut h11 = Dense::zeros(nb, nb);
    for (i, &v) in region.interior().iter().enumerate() {
        let nbrs = region.neighbors(v)?;
        let weight = T::one() / T::from_f64(nbrs.len() as f64);
        h00[(i, i)] = T::one() + potential.q_at::<T>(v, lambda);
        for &w in nbrs {
            match (region.interior_position(w), region.boundary_position(w)) {
                (Some(j), _) => h00[(i, j)] -= weight,
                (_, Some(j)) => h01[(i, j)] -= weight,
                _ => return Err(Error::MissingVertex(w)),
            }
        }
    }
    for (i, &v) in region.boundary().iter().enumerate() {
        let nbrs = region.neighbors(v)?;
        match convention {
            Convention::Standard => {
                let weight = T::one() / T::from_f64(nbrs.len() as f64);
                for &w in nbrs {
                    h10[(i, region.interior_position(w).ok_or(Error::MissingVertex(w))?)] -= weight;
                }
            }
            Convention::Modified => {
                h11[(i, i)] = T::from_f64(nbrs.len() as f64);
                for &w in nbrs {
                    h10[(i, region.interior_position(w).ok_or(Error::MissingVertex(w))?)] -= T::one();
                }
            }
        }
    }
    Ok(AssembledSystem {
        interior: region.interior().to_vec(),
        boundary: region.boundary().to_vec(),
        lambda,
        convention,
        h00,
        h01,
        h10,
        h11,
    })
}

impl<T: Real> AssembledSystem<T> {
    /// Smallest over largest singular value of `H(V₀;V₀)`.
    pub fn relative_sigma_min(&self) -> f64 {
        let s = singular_values(&self.h00.to_f64());
        match (s.first(), s.last()) {
            (Some(&hi), Some(&lo)) if hi > 0.0 => lo / hi,
            _ => 0.0,
        }
    }

    pub fn is_regular(&self) -> bool {
        self.relative_sigma_min() > REGULARITY_THRESHOLD
    }

    fn factor(&self) -> Result<Lu<T>> {
        let rel = self.relative_sigma_min();
        if rel <= REGULARITY_THRESHOLD {
            return Err(Error::Singular { rel_sigma_min: rel });
        }
        Lu::factor(&self.h00).map_err(|_| Error::Singular { rel_sigma_min: rel })
    }

    /// Interior values of the solution with boundary values `f` (boundary order).
    pub fn solve_dirichlet(&self, f: &[T]) -> Result<Vec<T>> {
        if f.len() != self.boundary.len() {
            return Err(Error::Geometry(format!(
                "boundary data has {} entries, expected {}",
                f.len(),
                self.boundary.len()
            )));
        }
        let lu = self.factor()?;
        let rhs: Vec<T> = self.h01.matvec(f).into_iter().map(|x| -x).collect();
        Ok(lu.solve(&rhs))
    }

    /// `Λ = H(V₁;V₁) − H(V₁;V₀) H(V₀;V₀)⁻¹ H(V₀;V₁)`.
    pub fn dn_map(&self) -> Result<DnMap<T>> {
        let lu = self.factor()?;
        let y = lu.solve_matrix(&self.h01);
        let prod = self.h10.matmul(&y);
        let mut matrix = self.h11.clone();
        for (m, p) in matrix.data.iter_mut().zip(prod.data) {
            *m -= p;
        }
        Ok(DnMap { lambda: self.lambda, boundary: self.boundary.clone(), convention: self.convention, matrix })
    }

    /// Residual `max |(H(V₀;V₀)u + H(V₀;V₁)f)|` of a candidate interior solution.
    pub fn interior_residual(&self, u: &[T], f: &[T]) -> f64 {
        let a = self.h00.matvec(u);
        let b = self.h01.matvec(f);
        a.iter().zip(&b).map(|(x, y)| (*x + *y).to_f64().abs()).fold(0.0, f64::max)
    }
}

pub fn is_regular(region: &Region, potential: &Potential, lambda: f64) -> Result<bool> {
    Ok(assemble::<f64>(region, potential, lambda, Convention::Modified)?.is_regular())
}

pub fn solve_dirichlet<T: Real>(
    region: &Region,
    potential: &Potential,
    lambda: f64,
    f: &[T],
) -> Result<Vec<T>> {
    assemble::<T>(region, potential, lambda, Convention::Modified)?.solve_dirichlet(f)
}

pub fn dn_map<T: Real>(
    region: &Region,
    potential: &Potential,
    lambda: f64,
    convention: Convention,
) -> Result<DnMap<T>> {
    assemble::<T>(region, potential, lambda, convention)?.dn_map()
}

/// A dense D-N matrix in the boundary order of its region.
#[derive(Clone, Debug, PartialEq)]
pub struct DnMap<T> {
    pub lambda: f64,
    pub boundary: Vec<VertexId>,
    pub convention: Convention,
    pub matrix: Dense<T>,
}

impl<T: Real> DnMap<T> {
    pub fn apply(&self, f: &[T]) -> Vec<T> {
        self.matrix.matvec(f)
    }

    pub fn to_f64(&self) -> DnMap<f64> {
        DnMap {
            lambda: self.lambda,
            boundary: self.boundary.clone(),
            convention: self.convention,
            matrix: self.matrix.to_f64(),
        }
    }

    pub fn position(&self, v: VertexId) -> Result<usize> {
        self.boundary.iter().position(|&w| w == v).ok_or(Error::NotBoundary(v))
    }

    /// Same operator in a permuted boundary order: entry `(i, j)` is the old `(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        DnMap {
            lambda: self.lambda,
            boundary: perm.iter().map(|&i| self.boundary[i]).collect(),
            convention: self.convention,
            matrix: self.matrix.sub_matrix(perm, perm),
        }
    }

    /// Smallest singular value and condition number of the block `Λ(rows; cols)`.
    pub fn block_conditioning(&self, rows: &[usize], cols: &[usize]) -> (f64, f64) {
        let s = singular_values(&self.matrix.sub_matrix(rows, cols).to_f64());
        let hi = s.first().copied().unwrap_or(0.0);
        let lo = s.last().copied().unwrap_or(0.0);
        (lo, if lo > 0.0 { hi / lo } else { f64::INFINITY })
    }

    /// Fill the `unknown` entries of `f` so that `(Λf)` equals `g` on `neumann`.
    ///
    /// `f` holds the known values off `unknown`; `g` is listed in the order of `neumann`.
    pub fn complete_boundary_data(
        &self,
        f: &[T],
        neumann: &[usize],
        g: &[T],
        unknown: &[usize],
        label: &str,
    ) -> Result<Vec<T>> {
        if neumann.len() != unknown.len() || g.len() != neumann.len() || f.len() != self.boundary.len() {
            return Err(Error::Geometry("partial data blocks have mismatched sizes".into()));
        }
        let (sigma_min, condition) = self.block_conditioning(neumann, unknown);
        let scale = self.matrix.max_abs().max(f64::MIN_POSITIVE);
        if !(sigma_min > block_threshold::<T>() * scale) {
            return Err(Error::SingularBlock { block: label.to_string(), condition });
        }
        let mut known = f.to_vec();
        for &j in unknown {
            known[j] = T::zero();
        }
        let full = self.matrix.matvec(&known);
        let rhs: Vec<T> = neumann.iter().zip(g).map(|(&i, &gi)| gi - full[i]).collect();
        let block = self.matrix.sub_matrix(neumann, unknown);
        let lu = Lu::factor(&block).map_err(|_| Error::SingularBlock { block: label.to_string(), condition })?;
        let x = lu.solve(&rhs);
        let mut out = known;
        for (&j, xj) in unknown.iter().zip(x) {
            out[j] = xj;
        }
        Ok(out)
    }

    /// Largest `|Λ(i,j) − Λ(j,i)|` after weighting rows by `weights`.
    pub fn symmetry_defect(&self, weights: &[f64]) -> f64 {
        let n = self.boundary.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = self.matrix[(i, j)].to_f64() * weights[i];
                let b = self.matrix[(j, i)].to_f64() * weights[j];
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }
}

/// Propagation: given Dirichlet data on part of the boundary, Neumann data where
/// available and the potential, recover every value reachable through the four-point relation.
///
/// `u` is seeded with the known boundary values; `g` carries modified-convention D-N values at
/// boundary vertices with a single interior neighbour.
pub fn propagate<T: Real>(
    region: &Region,
    q: &dyn Fn(VertexId) -> Option<T>,
    u: &mut BTreeMap<VertexId, T>,
    g: &BTreeMap<VertexId, T>,
    order: &[VertexId],
) -> Result<()> {
    for (&v, &gv) in g {
        let nbrs = region.neighbors(v)?;
        if nbrs.len() != 1 {
            return Err(Error::Geometry(format!("Neumann datum at {v} with {} interior neighbours", nbrs.len())));
        }
        let fv = *u.get(&v).ok_or(Error::MissingValue(v))?;
        u.entry(nbrs[0]).or_insert(fv - gv);
    }
    loop {
        let mut progressed = false;
        for &z in order {
            if step_four_point(region, q, u, z)?.is_some() {
                progressed = true;
            }
        }
        if !progressed {
            return Ok(());
        }
    }
}

/// One application of `deg(z)(1 + Q(z)) u(z) = Σ_{w~z} u(w)` with `z` central and exactly one
/// unknown peripheral value. Returns the vertex that was filled in.
pub fn step_four_point<T: Real>(
    region: &Region,
    q: &dyn Fn(VertexId) -> Option<T>,
    u: &mut BTreeMap<VertexId, T>,
    z: VertexId,
) -> Result<Option<VertexId>> {
    if !region.is_interior(z) {
        return Ok(None);
    }
    let Some(&uz) = u.get(&z) else {
        return Ok(None);
    };
    let nbrs = region.neighbors(z)?;
    let mut missing = None;
    let mut known = T::zero();
    for &w in nbrs {
        match u.get(&w) {
            Some(&x) => known += x,
            None if missing.is_none() => missing = Some(w),
            None => return Ok(None),
        }
    }
    let Some(w) = missing else {
        return Ok(None);
    };
    let Some(qz) = q(z) else {
        return Ok(None);
    };
    let deg = T::from_f64(nbrs.len() as f64);
    u.insert(w, deg * (T::one() + qz) * uz - known);
    Ok(Some(w))
}

/// Partial-data solve on the parallelogram: Dirichlet data `f` on every side except the right
/// one, Neumann data `g` (modified convention) on the left side. Returns `u` on all of `D`.
pub fn solve_partial_data<T: Real>(
    par: &HexParallelogram,
    potential: &Potential,
    lambda: f64,
    f: &BTreeMap<VertexId, T>,
    g: &BTreeMap<VertexId, T>,
) -> Result<BTreeMap<VertexId, T>> {
    let region = par.region();
    potential.check_support(region)?;
    let mut u = BTreeMap::new();
    for &v in region.boundary() {
        if par.side_of(v) != Some(Side::Right) {
            u.insert(v, *f.get(&v).ok_or(Error::MissingValue(v))?);
        }
    }
    let mut neumann = BTreeMap::new();
    for &v in par.left() {
        neumann.insert(v, *g.get(&v).ok_or(Error::MissingValue(v))?);
    }
    let q = |v: VertexId| Some(potential.q_at::<T>(v, lambda));
    let order = column_order(region.interior(), |v| par.graph().position(v));
    propagate(region, &q, &mut u, &neumann, &order)?;
    for v in par.all_vertices() {
        if !u.contains_key(&v) {
            return Err(Error::MissingValue(v));
        }
    }
    Ok(u)
}

/// Vertices sorted into columns left to right, bottom-up inside each column.
pub fn column_order(vertices: &[VertexId], position: impl Fn(VertexId) -> [f64; 2]) -> Vec<VertexId> {
    let mut out = vertices.to_vec();
    out.sort_by(|a, b| {
        let (pa, pb) = (position(*a), position(*b));
        pa[0].total_cmp(&pb[0]).then(pa[1].total_cmp(&pb[1]))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, CellWindow, LatticeKind};
    use crate::precision::DoubleDouble;
    use crate::region::close_region;
    use std::collections::BTreeSet;

    fn single_vertex() -> Region {
        let g = build_lattice(LatticeKind::Hexagonal, CellWindow::centered(3)).unwrap();
        close_region(&g, &BTreeSet::from([VertexId::new(1, 0, 0)])).unwrap()
    }

    #[test]
    fn single_vertex_blocks() {
        let r = single_vertex();
        let q_zero = Potential::from_q(&BTreeMap::from([(VertexId::new(1, 0, 0), 0.0)]), 0.0);
        let sys = assemble::<f64>(&r, &q_zero, 0.0, Convention::Standard).unwrap();
        assert_eq!(sys.h00.data, vec![1.0]);
        for j in 0..3 {
            assert!((sys.h01[(0, j)] + 1.0 / 3.0).abs() < 1e-16);
        }
        let modified = assemble::<f64>(&r, &Potential::zero(), -1.0, Convention::Modified).unwrap();
        // The interior block is 1 + Q = V − λ.
        assert_eq!(modified.h00.data, vec![1.0]);
        assert_eq!(modified.h11.data[0], 1.0);
    }

    #[test]
    fn single_vertex_dn_map_by_hand() {
        // Standard convention, V = 0, λ = 0.5: −λ u0 = (f1+f2+f3)/3, so u0 = −(2/3)Σf and Λf(b) = −u0.
        let r = single_vertex();
        let dn = dn_map::<f64>(&r, &Potential::zero(), 0.5, Convention::Standard).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((dn.matrix[(i, j)] - 2.0 / 3.0).abs() < 1e-15);
            }
        }
        let dm = dn_map::<f64>(&r, &Potential::zero(), 0.5, Convention::Modified).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let shift = if i == j { 1.0 } else { 0.0 };
                assert!((dm.matrix[(i, j)] - dn.matrix[(i, j)] - shift).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn potential_outside_interior_is_rejected() {
        let r = single_vertex();
        let pot = Potential::new(BTreeMap::from([(VertexId::new(2, 0, 0), 1.0)]));
        assert!(matches!(
            assemble::<f64>(&r, &pot, 0.0, Convention::Standard),
            Err(Error::PotentialOutsideInterior(_))
        ));
    }

    #[test]
    fn singular_interior_block_is_an_error() {
        // V − λ = 0 at the single vertex makes H(V₀;V₀) vanish.
        let r = single_vertex();
        let pot = Potential::new(BTreeMap::from([(VertexId::new(1, 0, 0), 0.25)]));
        let sys = assemble::<f64>(&r, &pot, 0.25, Convention::Modified).unwrap();
        assert!(!sys.is_regular());
        assert!(matches!(sys.dn_map(), Err(Error::Singular { .. })));
    }

    #[test]
    fn constants_solve_the_zero_energy_problem() {
        // Q ≡ 0 with V ≡ 0 needs λ = −1: constants are harmonic.
        let g = build_lattice(LatticeKind::Hexagonal, CellWindow::centered(4)).unwrap();
        let omega: BTreeSet<_> = crate::lattice::hexagon_ring(0, 0).into_iter().collect();
        let r = close_region(&g, &omega).unwrap();
        let f = vec![2.5; r.boundary().len()];
        let u = solve_dirichlet::<f64>(&r, &Potential::zero(), -1.0, &f).unwrap();
        assert!(u.iter().all(|x| (x - 2.5).abs() < 1e-13));
    }

    #[test]
    fn double_double_agrees_with_f64() {
        let r = single_vertex();
        let pot = Potential::new(BTreeMap::from([(VertexId::new(1, 0, 0), 0.3)]));
        let a = dn_map::<f64>(&r, &pot, 0.1, Convention::Modified).unwrap();
        let b = dn_map::<DoubleDouble>(&r, &pot, 0.1, Convention::Modified).unwrap().to_f64();
        for (x, y) in a.matrix.data.iter().zip(&b.matrix.data) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}

//! Lattice Green's functions at `λ + i0`, the single-layer operator on an interface, the
//! scattering amplitude of a finitely supported potential and the bridge identity between the
//! amplitude and boundary data.
//!
//! Vertex functions are plain sequences; the Hilbert structure is `ℓ²` with degree weights.
//! The Fourier transform is `(U f)_j(x) = (2π)⁻¹ √deg_j Σ_n f_j(n) e^{i n·x}` on `T² = [0, 2π)²`,
//! so that `U (−Δ) U⁻¹` is the symmetrized symbol `D^{1/2} H₀(x) D^{−1/2}`.

use crate::error::{Error, Result};
use crate::bvp::Potential;
use crate::lattice::{LatticeKind, VertexId};
use crate::spectral::{fermi_sample, symbol_of, PeriodicLattice, Symbol};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;

type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

fn periodic_of(kind: LatticeKind) -> Result<PeriodicLattice> {
    match kind {
        LatticeKind::Square => Ok(PeriodicLattice::Square),
        LatticeKind::Triangular => Ok(PeriodicLattice::Triangular),
        LatticeKind::Hexagonal => Ok(PeriodicLattice::Hexagonal),
        LatticeKind::Custom => Err(Error::UnsupportedKind("custom graphs have no periodic structure".into())),
    }
}

// ---------------------------------------------------------------------------------------------
// Laurent polynomials in w = e^{i x2}

#[derive(Clone, Debug)]
struct Laurent {
    low: i32,
    coeffs: Vec<C64>,
}

impl Laurent {
    fn zero() -> Self {
        Laurent { low: 0, coeffs: Vec::new() }
    }

    fn monomial(c: C64, power: i32) -> Self {
        Laurent { low: power, coeffs: vec![c] }
    }

    fn high(&self) -> i32 {
        self.low + self.coeffs.len() as i32 - 1
    }

    fn coeff(&self, power: i32) -> C64 {
        let k = power - self.low;
        if k < 0 || k as usize >= self.coeffs.len() {
            ZERO
        } else {
            self.coeffs[k as usize]
        }
    }

    fn add(&self, other: &Laurent, sign: f64) -> Laurent {
        if self.coeffs.is_empty() {
            return other.scale(C64::new(sign, 0.0));
        }
        if other.coeffs.is_empty() {
            return self.clone();
        }
        let low = self.low.min(other.low);
        let high = self.high().max(other.high());
        let coeffs = (low..=high).map(|p| self.coeff(p) + other.coeff(p) * sign).collect();
        Laurent { low, coeffs }
    }

    fn mul(&self, other: &Laurent) -> Laurent {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Laurent::zero();
        }
        let mut coeffs = vec![ZERO; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Laurent { low: self.low + other.low, coeffs }
    }

    fn scale(&self, c: C64) -> Laurent {
        Laurent { low: self.low, coeffs: self.coeffs.iter().map(|a| a * c).collect() }
    }

    fn shift(&self, power: i32) -> Laurent {
        Laurent { low: self.low + power, coeffs: self.coeffs.clone() }
    }

    /// Drop negligible coefficients at both ends.
    fn trimmed(&self) -> Laurent {
        let big = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let cut = big * 1e-14;
        let first = self.coeffs.iter().position(|c| c.norm() > cut);
        let Some(first) = first else { return Laurent::zero() };
        let last = self.coeffs.iter().rposition(|c| c.norm() > cut).unwrap_or(first);
        Laurent { low: self.low + first as i32, coeffs: self.coeffs[first..=last].to_vec() }
    }
}

/// `(2π)⁻¹ ∫ w^n / (w − r) dx₂` on the unit circle, `|r| ≠ 1`.
fn circle_mean(n: i32, r: C64) -> C64 {
    if r.norm() < 1.0 {
        if n >= 1 {
            r.powi(n - 1)
        } else {
            ZERO
        }
    } else if n <= 0 {
        -r.powi(n - 1)
    } else {
        ZERO
    }
}

/// `(2π)⁻¹ ∫ num(w) / den(w) dx₂` by partial fractions; `den` has at most two roots in `w`.
fn circle_integral(num: &Laurent, den: &Laurent) -> Result<C64> {
    let den = den.trimmed();
    let p = &den.coeffs;
    let degree = p.len().saturating_sub(1);
    let shifted = |n: i32| n - den.low;
    let mut total = ZERO;
    match degree {
        0 if p.is_empty() => return Err(Error::Scattering { stage: "green", reason: "symbol denominator vanishes".into() }),
        0 => {
            total = num.coeff(den.low) / p[0];
        }
        1 => {
            let r = -p[0] / p[1];
            for (k, a) in num.coeffs.iter().enumerate() {
                total += a * circle_mean(shifted(num.low + k as i32), r) / p[1];
            }
        }
        2 => {
            let (a0, a1, a2) = (p[0], p[1], p[2]);
            let mut disc = (a1 * a1 - a0 * a2 * 4.0).sqrt();
            if (a1.conj() * disc).re < 0.0 {
                disc = -disc;
            }
            let q = -(a1 + disc) * 0.5;
            let roots = [q / a2, a0 / q];
            for (i, &r) in roots.iter().enumerate() {
                let c = ONE / (a2 * (r - roots[1 - i]));
                for (k, a) in num.coeffs.iter().enumerate() {
                    total += a * c * circle_mean(shifted(num.low + k as i32), r);
                }
            }
        }
        _ => {
            return Err(Error::Scattering {
                stage: "green",
                reason: format!("symbol determinant has degree {degree} in e^(i x2); at most 2 is supported"),
            })
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------------------------
// Adaptive Gauss–Kronrod for vector-valued integrands

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const GAUSS_WEIGHTS: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

const MAX_DEPTH: usize = 60;

fn kronrod<F>(f: &F, a: f64, b: f64) -> Result<(Vec<C64>, f64)>
where
    F: Fn(f64) -> Result<Vec<C64>>,
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mid = f(centre)?;
    let mut k: Vec<C64> = mid.iter().map(|v| v * KRONROD_WEIGHTS[7]).collect();
    let mut g: Vec<C64> = mid.iter().map(|v| v * GAUSS_WEIGHTS[3]).collect();
    for i in 0..7 {
        let left = f(centre - half * KRONROD_NODES[i])?;
        let right = f(centre + half * KRONROD_NODES[i])?;
        for c in 0..k.len() {
            let sum = left[c] + right[c];
            k[c] += sum * KRONROD_WEIGHTS[i];
            if i % 2 == 1 {
                g[c] += sum * GAUSS_WEIGHTS[i / 2];
            }
        }
    }
    let err = k.iter().zip(&g).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) * half;
    Ok((k.into_iter().map(|v| v * half).collect(), err))
}

fn adapt<F>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> Result<(Vec<C64>, f64)>
where
    F: Fn(f64) -> Result<Vec<C64>>,
{
    let (value, err) = kronrod(f, a, b)?;
    if err <= tol || depth >= MAX_DEPTH {
        return Ok((value, err));
    }
    let mid = 0.5 * (a + b);
    let (left, el) = adapt(f, a, mid, 0.5 * tol, depth + 1)?;
    let (right, er) = adapt(f, mid, b, 0.5 * tol, depth + 1)?;
    Ok((left.iter().zip(&right).map(|(l, r)| l + r).collect(), el + er))
}

/// Integrate a vector-valued function over `[a, b]` to absolute tolerance `tol`. Panels are
/// processed in parallel and summed in panel order.
fn integrate<F>(f: &F, a: f64, b: f64, tol: f64, panels: usize) -> Result<(Vec<C64>, f64)>
where
    F: Fn(f64) -> Result<Vec<C64>> + Sync,
{
    let h = (b - a) / panels as f64;
    let parts: Vec<Result<(Vec<C64>, f64)>> = (0..panels)
        .into_par_iter()
        .map(|k| adapt(f, a + k as f64 * h, a + (k + 1) as f64 * h, tol / panels as f64, 0))
        .collect();
    let mut total: Option<Vec<C64>> = None;
    let mut err = 0.0;
    for part in parts {
        let (v, e) = part?;
        err += e;
        total = Some(match total {
            None => v,
            Some(t) => t.iter().zip(&v).map(|(x, y)| x + y).collect(),
        });
    }
    Ok((total.unwrap_or_default(), err))
}

// ---------------------------------------------------------------------------------------------
// Free Green's function

/// Translation class of a vertex pair: `(sub(a), sub(b), n(a) − n(b))`.
pub type GreenKey = (u8, u8, [i32; 2]);

pub fn green_key(a: VertexId, b: VertexId) -> GreenKey {
    (a.sub, b.sub, [a.n1 - b.n1, a.n2 - b.n2])
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenOptions {
    /// Decreasing positive imaginary parts used for extrapolation.
    pub epsilons: Vec<f64>,
    /// Absolute quadrature tolerance at each rung of the ladder.
    pub quadrature_tolerance: f64,
    /// Declared tolerance of the extrapolated values.
    pub tolerance: f64,
    /// Energies closer than this to a threshold are refused.
    pub threshold_margin: f64,
}

impl Default for GreenOptions {
    fn default() -> Self {
        GreenOptions {
            epsilons: (0..8).map(|k| 1e-2 / f64::powi(2.0, k)).collect(),
            quadrature_tolerance: 1e-11,
            tolerance: 1e-6,
            threshold_margin: 1e-2,
        }
    }
}

/// Rungs actually used at energy `λ`: those below a third of the threshold distance, topped up
/// by halving until at least four remain.
pub fn effective_ladder(options: &GreenOptions, threshold_distance: f64) -> Vec<f64> {
    let cap = threshold_distance / 3.0;
    let mut ladder: Vec<f64> = options.epsilons.iter().copied().filter(|&e| e <= cap).collect();
    let mut last = ladder.last().copied().or(options.epsilons.last().copied()).unwrap_or(1e-4).min(cap);
    if ladder.is_empty() {
        ladder.push(last);
    }
    while ladder.len() < 4 {
        last *= 0.5;
        ladder.push(last);
    }
    ladder
}

/// `R₀(λ+i0)` entries keyed by translation class.
#[derive(Clone, Debug)]
pub struct GreenKernel {
    pub kind: LatticeKind,
    pub lambda: f64,
    pub ladder: Vec<f64>,
    pub options: GreenOptions,
    entries: BTreeMap<GreenKey, C64>,
    /// Largest extrapolation error estimate over the stored entries.
    pub residual: f64,
    /// Smallest observed convergence order in `ε` over the stored entries.
    pub order: f64,
}

/// Values `G(a, b; z)` for every key at one complex energy with `Im z > 0`.
pub fn green_at(kind: LatticeKind, z: C64, keys: &[GreenKey], tolerance: f64) -> Result<Vec<C64>> {
    if z.im <= 0.0 {
        return Err(Error::Scattering { stage: "green", reason: format!("Im z = {} must be positive", z.im) });
    }
    let symbol = symbol_of(kind)?;
    let s = symbol.bands();
    if s > 2 {
        return Err(Error::UnsupportedKind(format!("{kind:?} has {s} sublattices")));
    }
    for &(i, j, _) in keys {
        if i == 0 || j == 0 || i as usize > s || j as usize > s {
            return Err(Error::Scattering { stage: "green", reason: format!("sublattice pair ({i},{j}) out of range") });
        }
    }
    let terms = symbol_terms(kind)?;
    let integrand = |x1: f64| -> Result<Vec<C64>> {
        let mut h = vec![vec![Laurent::zero(); s]; s];
        for &(i, j, m, weight) in &terms {
            let c = C64::from_polar(weight, -(m[0] as f64) * x1);
            h[i][j] = h[i][j].add(&Laurent::monomial(c, -m[1]), 1.0);
        }
        let shift = Laurent::monomial(z, 0);
        let (den, adj) = if s == 1 {
            (h[0][0].add(&shift, -1.0), vec![vec![Laurent::monomial(ONE, 0)]])
        } else {
            let d00 = h[0][0].add(&shift, -1.0);
            let d11 = h[1][1].add(&shift, -1.0);
            let den = d00.mul(&d11).add(&h[0][1].mul(&h[1][0]), -1.0);
            let adj = vec![vec![d11, h[0][1].scale(-ONE)], vec![h[1][0].scale(-ONE), d00]];
            (den, adj)
        };
        keys.iter()
            .map(|&(i, j, m)| {
                let num = adj[i as usize - 1][j as usize - 1].shift(-m[1]);
                let inner = circle_integral(&num, &den)?;
                Ok(inner * C64::from_polar(1.0 / TAU, -(m[0] as f64) * x1))
            })
            .collect()
    };
    // The offset keeps quadrature nodes off the symmetry lines of the symbol.
    let offset = 0.123_456_789;
    let (values, _) = integrate(&integrand, offset, offset + TAU, tolerance, 16)?;
    Ok(values)
}

/// `(row, column, shift, −1/deg_row)` for every edge of the symbol.
fn symbol_terms(kind: LatticeKind) -> Result<Vec<(usize, usize, [i32; 2], f64)>> {
    let s = kind.sublattices();
    let mut out = Vec::new();
    for sub in 1..=s {
        let rules = kind.edge_rules(sub)?;
        let weight = -1.0 / rules.len() as f64;
        for (target, d1, d2) in rules {
            out.push((sub as usize - 1, target as usize - 1, [d1, d2], weight));
        }
    }
    Ok(out)
}

/// Neville extrapolation of `(ε_k, f_k)` to `ε = 0`; returns the value and the difference to the
/// extrapolant that omits the largest `ε`.
fn extrapolate(eps: &[f64], values: &[C64]) -> (C64, f64) {
    let full = neville_at_zero(eps, values);
    let reduced = neville_at_zero(&eps[1..], &values[1..]);
    (full, (full - reduced).norm())
}

fn neville_at_zero(eps: &[f64], values: &[C64]) -> C64 {
    let n = eps.len();
    let mut table = values.to_vec();
    for level in 1..n {
        for i in 0..n - level {
            let (xi, xj) = (eps[i], eps[i + level]);
            table[i] = (table[i + 1] * xi - table[i] * xj) / (xi - xj);
        }
    }
    table[0]
}

/// Observed order `p` in `f(ε) − f(0) ~ ε^p` from the three smallest rungs (ratio-2 ladders).
fn observed_order(eps: &[f64], values: &[C64]) -> f64 {
    let n = eps.len();
    if n < 3 {
        return f64::NAN;
    }
    let d1 = (values[n - 3] - values[n - 2]).norm();
    let d2 = (values[n - 2] - values[n - 1]).norm();
    if d2 == 0.0 || d1 == 0.0 {
        return f64::INFINITY;
    }
    let ratio = eps[n - 3] / eps[n - 2];
    (d1 / d2).ln() / ratio.ln()
}

impl GreenKernel {
    pub fn new(kind: LatticeKind, lambda: f64, options: GreenOptions) -> Result<Self> {
        let lattice = periodic_of(kind)?;
        let (distance, threshold) = lattice.threshold_distance(lambda);
        if distance < options.threshold_margin {
            return Err(Error::NearThreshold { lambda, threshold, distance });
        }
        let thresholds = lattice.thresholds();
        let lo = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = thresholds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lambda <= lo || lambda >= hi {
            return Err(Error::Scattering { stage: "green", reason: format!("energy {lambda} is outside the spectrum") });
        }
        let ladder = effective_ladder(&options, distance);
        Ok(GreenKernel { kind, lambda, ladder, options, entries: BTreeMap::new(), residual: 0.0, order: f64::INFINITY })
    }

    pub fn compute(kind: LatticeKind, lambda: f64, pairs: &[(VertexId, VertexId)], options: GreenOptions) -> Result<Self> {
        let mut kernel = GreenKernel::new(kind, lambda, options)?;
        kernel.ensure(pairs.iter().map(|&(a, b)| green_key(a, b)))?;
        Ok(kernel)
    }

    /// Compute every missing key.
    pub fn ensure(&mut self, keys: impl IntoIterator<Item = GreenKey>) -> Result<()> {
        let missing: Vec<GreenKey> = keys
            .into_iter()
            .filter(|k| !self.entries.contains_key(k))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if missing.is_empty() {
            return Ok(());
        }
        let mut rungs = Vec::with_capacity(self.ladder.len());
        for &eps in &self.ladder {
            let z = C64::new(self.lambda, eps);
            rungs.push(green_at(self.kind, z, &missing, self.options.quadrature_tolerance)?);
        }
        for (c, key) in missing.iter().enumerate() {
            let values: Vec<C64> = rungs.iter().map(|r| r[c]).collect();
            let (value, err) = extrapolate(&self.ladder, &values);
            self.residual = self.residual.max(err);
            self.order = self.order.min(observed_order(&self.ladder, &values));
            self.entries.insert(*key, value);
        }
        if self.residual > self.options.tolerance {
            return Err(Error::Scattering {
                stage: "green",
                reason: format!("extrapolation residual {:e} exceeds {:e}", self.residual, self.options.tolerance),
            });
        }
        Ok(())
    }

    /// Insert precomputed values, e.g. from a cache file, with their error estimates.
    pub fn seed(&mut self, entries: impl IntoIterator<Item = (GreenKey, C64)>, residual: f64, order: f64) {
        self.entries.extend(entries);
        self.residual = self.residual.max(residual);
        self.order = self.order.min(order);
    }

    pub fn get(&self, a: VertexId, b: VertexId) -> Option<C64> {
        self.entries.get(&green_key(a, b)).copied()
    }

    pub fn entries(&self) -> &BTreeMap<GreenKey, C64> {
        &self.entries
    }

    /// `R₀(λ+i0)` on `rows × cols`.
    pub fn matrix(&mut self, rows: &[VertexId], cols: &[VertexId]) -> Result<DMatrix<C64>> {
        self.ensure(rows.iter().flat_map(|&a| cols.iter().map(move |&b| green_key(a, b))))?;
        Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.entries[&green_key(rows[i], cols[j])]))
    }
}

/// `R₀(λ+i0)(a, b)` with default options.
pub fn free_green(kind: LatticeKind, lambda: f64, a: VertexId, b: VertexId) -> Result<C64> {
    let kernel = GreenKernel::compute(kind, lambda, &[(a, b)], GreenOptions::default())?;
    Ok(kernel.get(a, b).expect("computed key"))
}

// ---------------------------------------------------------------------------------------------
// Perturbed resolvent and boundary operators

/// Imaginary-part sign of the limiting energy `λ ± i0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Side {
    Outgoing,
    Incoming,
}

impl Side {
    fn apply(self, m: DMatrix<C64>) -> DMatrix<C64> {
        match self {
            Side::Outgoing => m,
            // H₀ is a real operator, so R₀(λ − i0) is the entrywise conjugate of R₀(λ + i0).
            Side::Incoming => m.map(|c| c.conj()),
        }
    }
}

fn support(potential: &Potential) -> (Vec<VertexId>, DVector<C64>) {
    let support: Vec<VertexId> = potential.values.iter().filter(|(_, &x)| x != 0.0).map(|(&v, _)| v).collect();
    let values = DVector::from_iterator(support.len(), support.iter().map(|&v| C64::new(potential.get(v), 0.0)));
    (support, values)
}

/// Relative smallest singular value of a square complex matrix.
fn relative_sigma_min(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

const SINGULAR_RATIO: f64 = 1e-12;

fn invert(m: &DMatrix<C64>, stage: &'static str) -> Result<DMatrix<C64>> {
    let ratio = relative_sigma_min(m);
    if ratio < SINGULAR_RATIO {
        return Err(Error::Scattering { stage, reason: format!("matrix is singular (relative smallest singular value {ratio:e})") });
    }
    m.clone().try_inverse().ok_or(Error::Scattering { stage, reason: "inversion failed".into() })
}

/// `R(λ ± i0) = R₀ − R₀V(1 + R₀V)⁻¹R₀` restricted to `rows × cols`.
pub fn perturbed_resolvent_kernel(
    green: &mut GreenKernel,
    potential: &Potential,
    rows: &[VertexId],
    cols: &[VertexId],
    side: Side,
) -> Result<DMatrix<C64>> {
    let (supp, v) = support(potential);
    let g_rc = side.apply(green.matrix(rows, cols)?);
    if supp.is_empty() {
        return Ok(g_rc);
    }
    let g_rs = side.apply(green.matrix(rows, &supp)?);
    let g_ss = side.apply(green.matrix(&supp, &supp)?);
    let g_sc = side.apply(green.matrix(&supp, cols)?);
    let vd = DMatrix::from_diagonal(&v);
    let k = DMatrix::identity(supp.len(), supp.len()) + &g_ss * &vd;
    let k_inv = invert(&k, "perturbed resolvent")?;
    Ok(g_rc - g_rs * vd * k_inv * g_sc)
}

/// Finite interior `V_int°` of a potential perturbation, with interface `Σ` its outer vertex
/// boundary. The exterior `V_ext` is the complement of `V_int°`.
#[derive(Clone, Debug, Serialize)]
pub struct Interface {
    pub kind: LatticeKind,
    pub inner: Vec<VertexId>,
    pub sigma: Vec<VertexId>,
}

impl Interface {
    pub fn new(kind: LatticeKind, inner: Vec<VertexId>) -> Result<Self> {
        if inner.is_empty() {
            return Err(Error::Empty("interior vertex set"));
        }
        let inner_set: BTreeSet<VertexId> = inner.iter().copied().collect();
        let mut sigma = BTreeSet::new();
        for &v in &inner_set {
            for w in kind.lattice_neighbors(v)? {
                if !inner_set.contains(&w) {
                    sigma.insert(w);
                }
            }
        }
        let iface = Interface { kind, inner: inner_set.into_iter().collect(), sigma: sigma.into_iter().collect() };
        for &s in &iface.sigma {
            if iface.exterior_neighbours_of(s)?.is_empty() {
                return Err(Error::Geometry(format!("interface vertex {s} has no exterior neighbour")));
            }
        }
        Ok(iface)
    }

    /// The six vertices of one hexagon as interior; `Σ` is their six outward neighbours.
    pub fn hexagon(n1: i32, n2: i32) -> Result<Self> {
        Interface::new(LatticeKind::Hexagonal, crate::lattice::hexagon_ring(n1, n2).to_vec())
    }

    fn in_inner(&self, v: VertexId) -> bool {
        self.inner.binary_search(&v).is_ok()
    }

    fn in_sigma(&self, v: VertexId) -> bool {
        self.sigma.binary_search(&v).is_ok()
    }

    pub fn degree(&self, v: VertexId) -> Result<usize> {
        Ok(self.kind.lattice_neighbors(v)?.len())
    }

    /// `deg_{V_int}(a)`: neighbours in `V_int° ∪ Σ`.
    pub fn interior_degree(&self, a: VertexId) -> Result<usize> {
        Ok(self.kind.lattice_neighbors(a)?.into_iter().filter(|&w| self.in_inner(w) || self.in_sigma(w)).count())
    }

    /// `deg_{V_ext}(a)`: neighbours outside `V_int°`.
    pub fn exterior_degree(&self, a: VertexId) -> Result<usize> {
        Ok(self.kind.lattice_neighbors(a)?.into_iter().filter(|&w| !self.in_inner(w)).count())
    }

    fn exterior_neighbours_of(&self, a: VertexId) -> Result<Vec<VertexId>> {
        Ok(self.kind.lattice_neighbors(a)?.into_iter().filter(|&w| !self.in_inner(w) && !self.in_sigma(w)).collect())
    }

    /// Vertices of `V_ext°` adjacent to `Σ`.
    pub fn exterior_layer(&self) -> Result<Vec<VertexId>> {
        let mut out = BTreeSet::new();
        for &s in &self.sigma {
            out.extend(self.exterior_neighbours_of(s)?);
        }
        Ok(out.into_iter().collect())
    }

    pub fn check_potential(&self, potential: &Potential) -> Result<()> {
        for (&v, &x) in &potential.values {
            if x != 0.0 && !self.in_inner(v) {
                return Err(Error::PotentialOutsideInterior(v));
            }
        }
        Ok(())
    }

    fn degree_matrix(&self) -> Result<DMatrix<C64>> {
        let d: Result<Vec<C64>> = self.sigma.iter().map(|&s| Ok(C64::new(self.degree(s)? as f64, 0.0))).collect();
        Ok(DMatrix::from_diagonal(&DVector::from_vec(d?)))
    }

    /// `(S_Σ f)(a) = deg(a)⁻¹ Σ_{b~a, b∈Σ} f(b)`.
    pub fn sigma_adjacency(&self) -> Result<DMatrix<C64>> {
        let n = self.sigma.len();
        let mut s = DMatrix::from_element(n, n, ZERO);
        for (i, &a) in self.sigma.iter().enumerate() {
            let deg = self.degree(a)? as f64;
            for w in self.kind.lattice_neighbors(a)? {
                if let Ok(j) = self.sigma.binary_search(&w) {
                    s[(i, j)] += C64::new(1.0 / deg, 0.0);
                }
            }
        }
        Ok(s)
    }

    /// Interior D-N map `Λ_int(λ) f = ∂_ν u_int` with `∂_ν u(a) = −deg_{V_int}(a)⁻¹ Σ_{w∈V_int°} u(w)`.
    pub fn interior_dn(&self, potential: &Potential, lambda: f64) -> Result<DMatrix<C64>> {
        self.check_potential(potential)?;
        let (ni, ns) = (self.inner.len(), self.sigma.len());
        // (−Δ + V − λ) u = 0 on V_int°: A u_in = −B f.
        let mut a = DMatrix::from_element(ni, ni, ZERO);
        let mut b = DMatrix::from_element(ni, ns, ZERO);
        for (i, &v) in self.inner.iter().enumerate() {
            let nbrs = self.kind.lattice_neighbors(v)?;
            let deg = nbrs.len() as f64;
            a[(i, i)] += C64::new(potential.get(v) - lambda, 0.0);
            for w in nbrs {
                if let Ok(j) = self.inner.binary_search(&w) {
                    a[(i, j)] -= C64::new(1.0 / deg, 0.0);
                } else if let Ok(j) = self.sigma.binary_search(&w) {
                    b[(i, j)] -= C64::new(1.0 / deg, 0.0);
                }
            }
        }
        let ratio = relative_sigma_min(&a);
        if ratio < SINGULAR_RATIO {
            return Err(Error::Singular { rel_sigma_min: ratio });
        }
        let solution = -(invert(&a, "interior Dirichlet problem")? * b);
        let mut dn = DMatrix::from_element(ns, ns, ZERO);
        for (k, &s) in self.sigma.iter().enumerate() {
            let deg_int = self.interior_degree(s)? as f64;
            for w in self.kind.lattice_neighbors(s)? {
                if let Ok(i) = self.inner.binary_search(&w) {
                    for j in 0..ns {
                        dn[(k, j)] -= solution[(i, j)] / deg_int;
                    }
                }
            }
        }
        Ok(dn)
    }

    /// Exterior D-N map `Λ_ext^{(±)}(λ) f = −∂_ν u_ext` from the potential-theoretic solution.
    pub fn exterior_dn(&self, green: &mut GreenKernel, side: Side) -> Result<DMatrix<C64>> {
        let layer = self.exterior_layer()?;
        let r = invert(&side.apply(green.matrix(&self.sigma, &self.sigma)?), "boundary integral equation")?;
        let u = side.apply(green.matrix(&layer, &self.sigma)?) * r;
        let ns = self.sigma.len();
        let mut dn = DMatrix::from_element(ns, ns, ZERO);
        for (k, &s) in self.sigma.iter().enumerate() {
            let deg_ext = self.exterior_degree(s)? as f64;
            for w in self.exterior_neighbours_of(s)? {
                let i = layer.binary_search(&w).map_err(|_| Error::MissingVertex(w))?;
                for j in 0..ns {
                    dn[(k, j)] += u[(i, j)] / deg_ext;
                }
            }
        }
        Ok(dn)
    }
}

/// Solution of the exterior Dirichlet problem with data `f` on `Σ`, as `u = R₀(λ ± i0) ψ` with
/// `R₀ψ = f` on `Σ`, evaluated at `targets`.
pub fn exterior_dirichlet(
    green: &mut GreenKernel,
    sigma: &[VertexId],
    f: &[C64],
    targets: &[VertexId],
    side: Side,
) -> Result<Vec<C64>> {
    if f.len() != sigma.len() {
        return Err(Error::Scattering { stage: "exterior Dirichlet", reason: "data length differs from |Σ|".into() });
    }
    let m = side.apply(green.matrix(sigma, sigma)?);
    let ratio = relative_sigma_min(&m);
    if ratio < SINGULAR_RATIO {
        return Err(Error::Scattering {
            stage: "exterior Dirichlet",
            reason: format!("boundary Green matrix is singular (relative smallest singular value {ratio:e})"),
        });
    }
    let psi = m.lu().solve(&DVector::from_column_slice(f)).ok_or(Error::Scattering {
        stage: "exterior Dirichlet",
        reason: "boundary Green matrix is singular".into(),
    })?;
    let u = side.apply(green.matrix(targets, sigma)?) * psi;
    Ok(u.iter().copied().collect())
}

/// Single-layer operators `M_Σ^{(±)}` and their inverses, with the assembled form of `B_Σ^{(±)}`.
#[derive(Clone, Debug)]
pub struct LayerOperators {
    pub sigma: Vec<VertexId>,
    pub m_plus: DMatrix<C64>,
    pub m_minus: DMatrix<C64>,
    pub b_plus: DMatrix<C64>,
    pub b_minus: DMatrix<C64>,
    /// `M_int Λ_int − M_ext Λ_ext^{(±)} − S_Σ − λ`.
    pub assembled_plus: DMatrix<C64>,
    pub assembled_minus: DMatrix<C64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerReport {
    /// `‖M⁺ B⁺_assembled − 1‖` (max over both signs).
    pub identity_residual: f64,
    /// `‖(M⁻)* − M⁺‖ / ‖M⁺‖` in the degree-weighted adjoint.
    pub adjoint_residual: f64,
    /// `‖B_assembled − M⁻¹‖ / ‖M⁻¹‖`.
    pub assembly_residual: f64,
    pub green_residual: f64,
}

fn op_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Degree-weighted adjoint `D⁻¹ Aᴴ D` on `ℓ²(Σ, deg)`.
fn weighted_adjoint(a: &DMatrix<C64>, d: &DMatrix<C64>) -> DMatrix<C64> {
    let d_inv = d.map(|c| if c.norm() > 0.0 { ONE / c } else { ZERO });
    d_inv * a.adjoint() * d
}

pub fn layer_operators(
    green: &mut GreenKernel,
    iface: &Interface,
    potential: &Potential,
) -> Result<LayerOperators> {
    iface.check_potential(potential)?;
    let lambda = green.lambda;
    let sigma = iface.sigma.clone();
    let m_plus = perturbed_resolvent_kernel(green, potential, &sigma, &sigma, Side::Outgoing)?;
    let m_minus = perturbed_resolvent_kernel(green, potential, &sigma, &sigma, Side::Incoming)?;
    let b_plus = invert(&m_plus, "single layer")?;
    let b_minus = invert(&m_minus, "single layer")?;
    let int = iface.interior_dn(potential, lambda)?;
    let ns = sigma.len();
    let mut m_int = DMatrix::from_element(ns, ns, ZERO);
    let mut m_ext = DMatrix::from_element(ns, ns, ZERO);
    for (k, &s) in sigma.iter().enumerate() {
        let deg = iface.degree(s)? as f64;
        m_int[(k, k)] = C64::new(iface.interior_degree(s)? as f64 / deg, 0.0);
        m_ext[(k, k)] = C64::new(iface.exterior_degree(s)? as f64 / deg, 0.0);
    }
    let s_sigma = iface.sigma_adjacency()?;
    let shift = DMatrix::<C64>::identity(ns, ns) * C64::new(lambda, 0.0);
    let mut assembled = Vec::with_capacity(2);
    for side in [Side::Outgoing, Side::Incoming] {
        let ext = iface.exterior_dn(green, side)?;
        assembled.push(&m_int * &int - &m_ext * ext - &s_sigma - &shift);
    }
    let assembled_minus = assembled.pop().expect("two sides");
    let assembled_plus = assembled.pop().expect("two sides");
    Ok(LayerOperators { sigma, m_plus, m_minus, b_plus, b_minus, assembled_plus, assembled_minus })
}

impl LayerOperators {
    pub fn report(&self, iface: &Interface, green_residual: f64) -> Result<LayerReport> {
        let n = self.sigma.len();
        let id = DMatrix::<C64>::identity(n, n);
        let identity_residual = op_norm(&(&self.m_plus * &self.assembled_plus - &id))
            .max(op_norm(&(&self.m_minus * &self.assembled_minus - &id)));
        let d = iface.degree_matrix()?;
        let adjoint_residual = op_norm(&(weighted_adjoint(&self.m_minus, &d) - &self.m_plus)) / op_norm(&self.m_plus);
        let assembly_residual = (op_norm(&(&self.assembled_plus - &self.b_plus)) / op_norm(&self.b_plus))
            .max(op_norm(&(&self.assembled_minus - &self.b_minus)) / op_norm(&self.b_minus));
        Ok(LayerReport { identity_residual, adjoint_residual, assembly_residual, green_residual })
    }
}

// ---------------------------------------------------------------------------------------------
// Fermi traces, scattering amplitude and the bridge identities

/// Discretized energy shell `M_λ` with the `h_λ` quadrature weights `ds / |∇λ_j|`.
#[derive(Clone, Debug)]
pub struct FermiGrid {
    pub kind: LatticeKind,
    pub lambda: f64,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Unit eigenvectors `a_j(x)` of the symmetrized symbol for the eigenvalue `λ`.
    pub vectors: Vec<DVector<C64>>,
}

fn symmetrized_symbol(symbol: &Symbol, x: [f64; 2]) -> DMatrix<C64> {
    let mut h = symbol.evaluate(x);
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            h[(i, j)] *= (symbol.degree(i) as f64 / symbol.degree(j) as f64).sqrt();
        }
    }
    h
}

impl FermiGrid {
    /// `count` samples per closed component of every nonempty sheet.
    pub fn new(kind: LatticeKind, lambda: f64, count: usize) -> Result<Self> {
        let lattice = periodic_of(kind)?;
        let symbol = symbol_of(kind)?;
        let mut grid = FermiGrid { kind, lambda, points: Vec::new(), weights: Vec::new(), vectors: Vec::new() };
        for sheet in 1..=lattice.all_sheets(lambda).len() {
            let sample = match fermi_sample(lattice, lambda, sheet, count) {
                Ok(s) => s,
                Err(Error::EmptyLevelSet(_)) => continue,
                Err(e) => return Err(e),
            };
            for comp in &sample.components {
                let step = comp.step();
                for (&x, &w) in comp.points.iter().zip(&comp.weights) {
                    let eig = nalgebra::SymmetricEigen::new(symmetrized_symbol(&symbol, x));
                    let (k, gap) = (0..eig.eigenvalues.len())
                        .map(|k| (k, (eig.eigenvalues[k] - lambda).abs()))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .ok_or(Error::EmptyLevelSet(lambda))?;
                    if gap > 1e-8 {
                        return Err(Error::Geometry(format!("Fermi sample {x:?} is {gap:e} off the shell")));
                    }
                    grid.points.push(x);
                    grid.weights.push(w * step);
                    grid.vectors.push(eig.eigenvectors.column(k).into_owned());
                }
            }
        }
        if grid.points.is_empty() {
            return Err(Error::EmptyLevelSet(lambda));
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `E(x_k, b)` with `(F₀ g)(x_k) = Σ_b E(x_k, b) g(b)`.
    pub fn trace_matrix(&self, vertices: &[VertexId]) -> Result<DMatrix<C64>> {
        let symbol = symbol_of(self.kind)?;
        let mut e = DMatrix::from_element(self.len(), vertices.len(), ZERO);
        for (k, (x, a)) in self.points.iter().zip(&self.vectors).enumerate() {
            for (c, v) in vertices.iter().enumerate() {
                let j = v.sub as usize - 1;
                let phase = v.n1 as f64 * x[0] + v.n2 as f64 * x[1];
                let scale = (symbol.degree(j) as f64).sqrt() / TAU;
                e[(k, c)] = a[j].conj() * C64::from_polar(scale, phase);
            }
        }
        Ok(e)
    }

    /// Kernel of `F₀*` restricted to `vertices`: `(F₀*φ)(b) = Σ_k K(b, k) φ_k`.
    pub fn adjoint_trace_matrix(&self, vertices: &[VertexId]) -> Result<DMatrix<C64>> {
        let e = self.trace_matrix(vertices)?;
        let symbol = symbol_of(self.kind)?;
        let mut k = e.adjoint();
        for (c, v) in vertices.iter().enumerate() {
            let deg = symbol.degree(v.sub as usize - 1) as f64;
            for l in 0..self.len() {
                k[(c, l)] *= self.weights[l] / deg;
            }
        }
        Ok(k)
    }

    /// `W^{1/2} K W^{1/2}` for a kernel `K(x_k, x_l)`, the matrix of the operator in an orthonormal
    /// frame of the discretized `h_λ`.
    pub fn normalized(&self, kernel: &DMatrix<C64>) -> DMatrix<C64> {
        let root: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        DMatrix::from_fn(kernel.nrows(), kernel.ncols(), |i, j| kernel[(i, j)] * root[i] * root[j])
    }
}

/// Scattering amplitude `A(λ)` on a Fermi grid, as an operator kernel.
#[derive(Clone, Debug)]
pub struct AmplitudeKernel {
    pub lambda: f64,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// `A(x_k, x_l)`; the operator acts as `(Aφ)_k = Σ_l A(x_k, x_l) w_l φ_l`.
    pub kernel: DMatrix<C64>,
}

impl AmplitudeKernel {
    fn normalized(&self) -> DMatrix<C64> {
        let root: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        DMatrix::from_fn(self.kernel.nrows(), self.kernel.ncols(), |i, j| self.kernel[(i, j)] * root[i] * root[j])
    }

    /// `S = 1 − 2πi A` in an orthonormal frame of the discretized `h_λ`.
    pub fn scattering_matrix(&self) -> DMatrix<C64> {
        let n = self.kernel.nrows();
        DMatrix::identity(n, n) - self.normalized() * C64::new(0.0, TAU)
    }

    /// `‖S*S − 1‖` in operator norm.
    pub fn unitarity_defect(&self) -> f64 {
        let s = self.scattering_matrix();
        let n = s.nrows();
        op_norm(&(s.adjoint() * &s - DMatrix::<C64>::identity(n, n)))
    }

    /// Largest `| |A(x′, x)| − |A(−x, −x′)| |` over grid pairs whose negatives are also grid
    /// points, relative to `max |A|`. Moduli are compared because eigenvector phases are a gauge.
    pub fn reciprocity_defect(&self) -> Option<f64> {
        let find = |x: [f64; 2]| {
            let target = crate::spectral::wrap([-x[0], -x[1]]);
            self.points.iter().position(|p| {
                let q = crate::spectral::wrap(*p);
                let d = |a: f64, b: f64| {
                    let r = (a - b).rem_euclid(TAU);
                    r.min(TAU - r)
                };
                d(q[0], target[0]).max(d(q[1], target[1])) < 1e-9
            })
        };
        let neg: Vec<Option<usize>> = self.points.iter().map(|&x| find(x)).collect();
        let scale = self.kernel.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mut worst: Option<f64> = None;
        for (k, nk) in neg.iter().enumerate() {
            for (l, nl) in neg.iter().enumerate() {
                if let (Some(nk), Some(nl)) = (nk, nl) {
                    let d = (self.kernel[(k, l)].norm() - self.kernel[(*nl, *nk)].norm()).abs();
                    worst = Some(worst.unwrap_or(0.0).max(d));
                }
            }
        }
        worst.map(|w| if scale > 0.0 { w / scale } else { w })
    }
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Scattering { .. } => e,
        other => Error::Scattering { stage, reason: other.to_string() },
    })
}

/// `A(λ) = F₀(λ)(1 − V R(λ+i0)) V F₀(λ)*` for a potential perturbation of the free lattice.
pub fn scattering_amplitude(green: &mut GreenKernel, potential: &Potential, grid: &FermiGrid) -> Result<AmplitudeKernel> {
    let n = grid.len();
    let (supp, v) = support(potential);
    let kernel = if supp.is_empty() {
        DMatrix::from_element(n, n, ZERO)
    } else {
        let r = staged("perturbed resolvent", perturbed_resolvent_kernel(green, potential, &supp, &supp, Side::Outgoing))?;
        let vd = DMatrix::from_diagonal(&v);
        let t = &vd - &vd * r * &vd;
        let e = grid.trace_matrix(&supp)?;
        let symbol = symbol_of(grid.kind)?;
        let d_inv = DMatrix::from_diagonal(&DVector::from_iterator(
            supp.len(),
            supp.iter().map(|s| C64::new(1.0 / symbol.degree(s.sub as usize - 1) as f64, 0.0)),
        ));
        &e * t * d_inv * e.adjoint()
    };
    Ok(AmplitudeKernel { lambda: grid.lambda, points: grid.points.clone(), weights: grid.weights.clone(), kernel })
}

/// Both sides of `A_ext − A = I⁺ (B⁺)⁻¹ (I⁻)*` on a shared Fermi grid.
#[derive(Clone, Debug)]
pub struct BridgeKernels {
    /// `A_ext` from its definition `F⁺ χ_Σ B⁺ χ_Σ F₀*` with the perturbed `F⁺` and `B⁺`.
    pub exterior: DMatrix<C64>,
    /// `A_ext` from the free single layer, `F₀ χ_Σ (M₀⁺)⁻¹ χ_Σ F₀*`.
    pub exterior_free: DMatrix<C64>,
    pub amplitude: DMatrix<C64>,
    /// `I⁺` from its definition `F⁺ χ_Σ B⁺` and from the free formula `F₀ χ_Σ r_Σ⁺`.
    pub i_plus: DMatrix<C64>,
    pub i_plus_free: DMatrix<C64>,
    pub i_minus_free: DMatrix<C64>,
    /// `I⁺ M⁺ (I⁻)*`.
    pub rhs: DMatrix<C64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BridgeReport {
    pub lambda: f64,
    pub samples: usize,
    /// `‖(A_ext − A) − I⁺(B⁺)⁻¹(I⁻)*‖ / ‖I⁺(B⁺)⁻¹(I⁻)*‖` in operator norm on `h_λ`.
    pub residual: f64,
    /// Relative gap between the perturbed and free expressions of `I⁺`.
    pub i_independence: f64,
    /// Relative gap between the perturbed and free expressions of `A_ext`.
    pub exterior_independence: f64,
    pub green_residual: f64,
    pub rhs_norm: f64,
}

fn rel(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let scale = op_norm(b);
    if scale == 0.0 {
        op_norm(a)
    } else {
        op_norm(&(a - b)) / scale
    }
}

pub fn bridge_kernels(green: &mut GreenKernel, iface: &Interface, potential: &Potential, grid: &FermiGrid) -> Result<BridgeKernels> {
    staged("interface", iface.check_potential(potential))?;
    let sigma = &iface.sigma;
    let (supp, v) = support(potential);
    let m0_plus = staged("free single layer", green.matrix(sigma, sigma))?;
    let r_plus = staged("free single layer", invert(&m0_plus, "free single layer"))?;
    let r_minus = staged("free single layer", invert(&Side::Incoming.apply(m0_plus.clone()), "free single layer"))?;
    let layers = staged("layer operators", layer_operators(green, iface, potential))?;
    let amplitude = staged("scattering amplitude", scattering_amplitude(green, potential, grid))?.kernel;
    let e_sigma = grid.trace_matrix(sigma)?;
    let f0_adj_sigma = grid.adjoint_trace_matrix(sigma)?;
    // F⁺ χ_Σ h = F₀ (χ_Σ h − V R⁺ χ_Σ h).
    let f_plus_sigma = if supp.is_empty() {
        e_sigma.clone()
    } else {
        let r_s_sigma = staged("perturbed resolvent", perturbed_resolvent_kernel(green, potential, &supp, sigma, Side::Outgoing))?;
        let e_s = grid.trace_matrix(&supp)?;
        &e_sigma - e_s * DMatrix::from_diagonal(&v) * r_s_sigma
    };
    let i_plus = &f_plus_sigma * &layers.b_plus;
    let exterior = &i_plus * &f0_adj_sigma;
    let i_plus_free = &e_sigma * &r_plus;
    let i_minus_free = &e_sigma * &r_minus;
    let exterior_free = &i_plus_free * &f0_adj_sigma;
    // (I⁻)* as a kernel Σ × samples: D⁻¹ (I⁻)ᴴ, weights applied by the operator norm below.
    let symbol = symbol_of(grid.kind)?;
    let d_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        sigma.len(),
        sigma.iter().map(|s| C64::new(1.0 / symbol.degree(s.sub as usize - 1) as f64, 0.0)),
    ));
    let rhs = &i_plus_free * &layers.m_plus * d_inv * i_minus_free.adjoint();
    let exterior_kernel = exterior_free_kernel(&exterior, grid);
    Ok(BridgeKernels {
        exterior: exterior_kernel,
        exterior_free: exterior_free_kernel(&exterior_free, grid),
        amplitude,
        i_plus,
        i_plus_free,
        i_minus_free,
        rhs,
    })
}

/// Strip the quadrature weights carried by `F₀*` so that every kernel is `K(x_k, x_l)`.
fn exterior_free_kernel(operator: &DMatrix<C64>, grid: &FermiGrid) -> DMatrix<C64> {
    DMatrix::from_fn(operator.nrows(), operator.ncols(), |i, j| operator[(i, j)] / grid.weights[j])
}

pub fn verify_bridge_identity(green: &mut GreenKernel, iface: &Interface, potential: &Potential, grid: &FermiGrid) -> Result<BridgeReport> {
    let k = bridge_kernels(green, iface, potential, grid)?;
    let lhs = grid.normalized(&(&k.exterior - &k.amplitude));
    let rhs = grid.normalized(&k.rhs);
    let i_scale = |m: &DMatrix<C64>| {
        let root = DMatrix::from_diagonal(&DVector::from_iterator(grid.len(), grid.weights.iter().map(|w| C64::new(w.sqrt(), 0.0))));
        root * m
    };
    Ok(BridgeReport {
        lambda: grid.lambda,
        samples: grid.len(),
        residual: rel(&lhs, &rhs),
        i_independence: rel(&i_scale(&k.i_plus), &i_scale(&k.i_plus_free)),
        exterior_independence: rel(&grid.normalized(&k.exterior), &grid.normalized(&k.exterior_free)),
        green_residual: green.residual,
        rhs_norm: op_norm(&rhs),
    })
}

/// Three-way comparison of `A₂ − A₁` for two potentials inside the same interface.
#[derive(Clone, Debug, Serialize)]
pub struct PerturbationReport {
    /// Direct difference of amplitudes against the D-N perturbation formula.
    pub direct_vs_formula: f64,
    /// Direct difference against the difference of the two bridge right-hand sides.
    pub direct_vs_bridge: f64,
    pub formula_vs_bridge: f64,
    /// `‖Λ_int,2 − Λ_int,1‖`; zero means the scattering data cannot tell the potentials apart.
    pub dn_gap: f64,
}

pub fn verify_perturbation_formula(
    green: &mut GreenKernel,
    iface: &Interface,
    first: &Potential,
    second: &Potential,
    grid: &FermiGrid,
) -> Result<PerturbationReport> {
    let lambda = green.lambda;
    let k1 = bridge_kernels(green, iface, first, grid)?;
    let k2 = bridge_kernels(green, iface, second, grid)?;
    let l1 = staged("layer operators", layer_operators(green, iface, first))?;
    let l2 = staged("layer operators", layer_operators(green, iface, second))?;
    let int1 = staged("interior D-N map", iface.interior_dn(first, lambda))?;
    let int2 = staged("interior D-N map", iface.interior_dn(second, lambda))?;
    let ns = iface.sigma.len();
    let mut m_int = DMatrix::from_element(ns, ns, ZERO);
    let symbol = symbol_of(iface.kind)?;
    let mut d_inv = DMatrix::from_element(ns, ns, ZERO);
    for (k, &s) in iface.sigma.iter().enumerate() {
        let deg = iface.degree(s)? as f64;
        m_int[(k, k)] = C64::new(iface.interior_degree(s)? as f64 / deg, 0.0);
        d_inv[(k, k)] = C64::new(1.0 / symbol.degree(s.sub as usize - 1) as f64, 0.0);
    }
    let direct = grid.normalized(&(&k2.amplitude - &k1.amplitude));
    let formula = grid.normalized(
        &(&k1.i_plus_free * &l2.m_plus * &m_int * (&int2 - &int1) * &l1.m_plus * &d_inv * k1.i_minus_free.adjoint()),
    );
    let bridge = grid.normalized(&(&k1.rhs - &k2.rhs));
    Ok(PerturbationReport {
        direct_vs_formula: rel(&direct, &formula),
        direct_vs_bridge: rel(&direct, &bridge),
        formula_vs_bridge: rel(&formula, &bridge),
        dn_gap: op_norm(&(int2 - int1)),
    })
}

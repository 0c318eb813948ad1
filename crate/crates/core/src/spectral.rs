//! Fourier symbols, characteristic polynomials, Fermi curves and their curvature.
//!
//! For every tabulated lattice the Fermi set `M_λ` is a union of level sets `{g(x) = κ(λ)}` of
//! one of two base functions, `a2 = cos x1 + cos x2` or `b2 = cos x1 + cos x2 + cos(x1 − x2)`.
//! Each such level set is called a sheet here; sheets are numbered from 1 in the order of the
//! factors of the characteristic polynomial.

use crate::error::{Error, Result};
use crate::lattice::{LatticeKind, VertexId};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeriodicLattice {
    Square,
    Subdivision,
    Ladder,
    Triangular,
    Hexagonal,
    Kagome,
    Graphite,
}

impl fmt::Display for PeriodicLattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            PeriodicLattice::Square => "square",
            PeriodicLattice::Subdivision => "subdivision",
            PeriodicLattice::Ladder => "ladder",
            PeriodicLattice::Triangular => "triangular",
            PeriodicLattice::Hexagonal => "hexagonal",
            PeriodicLattice::Kagome => "kagome",
            PeriodicLattice::Graphite => "graphite",
        };
        f.write_str(name)
    }
}

impl FromStr for PeriodicLattice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "square" => PeriodicLattice::Square,
            "subdivision" => PeriodicLattice::Subdivision,
            "ladder" => PeriodicLattice::Ladder,
            "triangular" | "tri" => PeriodicLattice::Triangular,
            "hexagonal" | "hex" => PeriodicLattice::Hexagonal,
            "kagome" => PeriodicLattice::Kagome,
            "graphite" => PeriodicLattice::Graphite,
            other => return Err(Error::UnsupportedKind(other.to_string())),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseFunction {
    /// `cos x1 + cos x2`
    A2,
    /// `cos x1 + cos x2 + cos(x1 − x2)`
    B2,
}

impl BaseFunction {
    pub fn value(self, x: [f64; 2]) -> f64 {
        match self {
            BaseFunction::A2 => x[0].cos() + x[1].cos(),
            BaseFunction::B2 => x[0].cos() + x[1].cos() + (x[0] - x[1]).cos(),
        }
    }

    pub fn gradient(self, x: [f64; 2]) -> [f64; 2] {
        match self {
            BaseFunction::A2 => [-x[0].sin(), -x[1].sin()],
            BaseFunction::B2 => {
                let d = (x[0] - x[1]).sin();
                [-x[0].sin() - d, -x[1].sin() + d]
            }
        }
    }

    pub fn range(self) -> (f64, f64) {
        match self {
            BaseFunction::A2 => (-2.0, 2.0),
            BaseFunction::B2 => (-1.5, 3.0),
        }
    }

    /// Points where the extrema are attained in `[0, 2π)²`.
    pub fn extrema(self) -> &'static [[f64; 2]] {
        const K: f64 = 2.0 * PI / 3.0;
        match self {
            BaseFunction::A2 => &[[0.0, 0.0], [PI, PI]],
            BaseFunction::B2 => &[[0.0, 0.0], [2.0 * K, K], [K, 2.0 * K]],
        }
    }

    /// Critical values: extrema and saddle levels.
    pub fn critical_values(self) -> &'static [f64] {
        match self {
            BaseFunction::A2 => &[-2.0, 0.0, 2.0],
            BaseFunction::B2 => &[-1.5, -1.0, 3.0],
        }
    }
}

/// One factor of the characteristic polynomial: the level set `{g = level}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sheet {
    pub base: BaseFunction,
    pub level: f64,
    /// `dκ/dλ`, so that `|∇λ_j| = |∇g| / |dκ/dλ|` on the sheet.
    pub slope: f64,
}

impl PeriodicLattice {
    pub const ALL: [PeriodicLattice; 7] = [
        PeriodicLattice::Square,
        PeriodicLattice::Subdivision,
        PeriodicLattice::Ladder,
        PeriodicLattice::Triangular,
        PeriodicLattice::Hexagonal,
        PeriodicLattice::Kagome,
        PeriodicLattice::Graphite,
    ];

    /// The graph generator behind the lattice, when one exists.
    pub fn lattice_kind(self) -> Option<LatticeKind> {
        match self {
            PeriodicLattice::Square => Some(LatticeKind::Square),
            PeriodicLattice::Triangular => Some(LatticeKind::Triangular),
            PeriodicLattice::Hexagonal => Some(LatticeKind::Hexagonal),
            _ => None,
        }
    }

    pub fn base(self) -> BaseFunction {
        match self {
            PeriodicLattice::Square | PeriodicLattice::Subdivision | PeriodicLattice::Ladder => BaseFunction::A2,
            _ => BaseFunction::B2,
        }
    }

    /// Closed-form `p(x, λ)` in dimension two.
    pub fn char_poly(self, x: [f64; 2], lambda: f64) -> f64 {
        let g = self.base().value(x);
        let l = lambda;
        match self {
            PeriodicLattice::Square => -(g + 2.0 * l) / 2.0,
            PeriodicLattice::Subdivision => -(-l) / 4.0 * (g - 4.0 * l * l + 2.0),
            PeriodicLattice::Ladder => 0.16 * (g + (5.0 * l + 1.0) / 2.0) * (g + (5.0 * l - 1.0) / 2.0),
            PeriodicLattice::Triangular => -(g + 3.0 * l) / 3.0,
            PeriodicLattice::Hexagonal => -2.0 / 9.0 * (g - (9.0 * l * l - 3.0) / 2.0),
            PeriodicLattice::Kagome => (l - 0.5) * (g - 8.0 * l * l - 4.0 * l + 1.0) / 8.0,
            PeriodicLattice::Graphite => {
                (g - (8.0 * l * l + 4.0 * l - 1.0)) * (g - (8.0 * l * l - 4.0 * l - 1.0)) / 64.0
            }
        }
    }

    /// Every factor of `p(·, λ)` that depends on `x`, nonempty or not.
    pub fn all_sheets(self, lambda: f64) -> Vec<Sheet> {
        let base = self.base();
        let l = lambda;
        let mk = |level: f64, slope: f64| Sheet { base, level, slope };
        match self {
            PeriodicLattice::Square => vec![mk(-2.0 * l, -2.0)],
            PeriodicLattice::Subdivision => vec![mk(4.0 * l * l - 2.0, 8.0 * l)],
            PeriodicLattice::Ladder => vec![mk(-(5.0 * l + 1.0) / 2.0, -2.5), mk(-(5.0 * l - 1.0) / 2.0, -2.5)],
            PeriodicLattice::Triangular => vec![mk(-3.0 * l, -3.0)],
            PeriodicLattice::Hexagonal => vec![mk((9.0 * l * l - 3.0) / 2.0, 9.0 * l)],
            PeriodicLattice::Kagome => vec![mk(8.0 * l * l + 4.0 * l - 1.0, 16.0 * l + 4.0)],
            PeriodicLattice::Graphite => {
                vec![mk(8.0 * l * l + 4.0 * l - 1.0, 16.0 * l + 4.0), mk(8.0 * l * l - 4.0 * l - 1.0, 16.0 * l - 4.0)]
            }
        }
    }

    /// Sheets whose level lies strictly inside the range of the base function.
    pub fn sheets(self, lambda: f64) -> Vec<Sheet> {
        let (lo, hi) = self.base().range();
        self.all_sheets(lambda).into_iter().filter(|s| s.level > lo && s.level < hi).collect()
    }

    /// Flat bands: energies at which `p(·, λ)` vanishes identically.
    pub fn flat_bands(self) -> &'static [f64] {
        match self {
            PeriodicLattice::Subdivision => &[0.0],
            PeriodicLattice::Kagome => &[0.5],
            _ => &[],
        }
    }

    /// Threshold energies: band edges, saddle levels and flat bands.
    pub fn thresholds(self) -> Vec<f64> {
        let r = 0.5f64.sqrt();
        match self {
            PeriodicLattice::Square => vec![-1.0, 0.0, 1.0],
            PeriodicLattice::Subdivision => vec![-1.0, -r, 0.0, r, 1.0],
            PeriodicLattice::Ladder => vec![-1.0, -0.6, -0.2, 0.2, 0.6, 1.0],
            PeriodicLattice::Triangular => vec![-1.0, 1.0 / 3.0, 0.5],
            PeriodicLattice::Hexagonal => vec![-1.0, -1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0],
            PeriodicLattice::Kagome => vec![-1.0, -0.5, -0.25, 0.0, 0.5],
            PeriodicLattice::Graphite => vec![-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0],
        }
    }

    /// Distance from `λ` to the nearest threshold, with that threshold.
    pub fn threshold_distance(self, lambda: f64) -> (f64, f64) {
        self.thresholds()
            .into_iter()
            .map(|t| ((lambda - t).abs(), t))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("nonempty threshold table")
    }
}

/// The Fourier symbol `H₀(x)` of a generated lattice, in the convention where a shift by `m`
/// cells becomes multiplication by `e^{−i m·x}`.
#[derive(Clone, Debug)]
pub struct Symbol {
    kind: LatticeKind,
    /// `(row sublattice, column sublattice, shift)` for every edge.
    terms: Vec<(usize, usize, [i32; 2])>,
    degrees: Vec<usize>,
}

pub fn symbol_of(kind: LatticeKind) -> Result<Symbol> {
    if kind == LatticeKind::Custom {
        return Err(Error::UnsupportedKind("custom graphs have no periodic structure".into()));
    }
    let s = kind.sublattices();
    let mut terms = Vec::new();
    let mut degrees = Vec::new();
    for sub in 1..=s {
        let rules = kind.edge_rules(sub)?;
        degrees.push(rules.len());
        for (target, d1, d2) in rules {
            terms.push((sub as usize - 1, target as usize - 1, [d1, d2]));
        }
    }
    Ok(Symbol { kind, terms, degrees })
}

impl Symbol {
    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn bands(&self) -> usize {
        self.degrees.len()
    }

    pub fn degree(&self, sub: usize) -> usize {
        self.degrees[sub]
    }

    /// `H₀(x)_{ij} = −(1/deg_i) Σ_{edges (i,n)→(j,n+m)} e^{−i m·x}`.
    pub fn evaluate(&self, x: [f64; 2]) -> DMatrix<Complex64> {
        let s = self.bands();
        let mut h = DMatrix::from_element(s, s, Complex64::new(0.0, 0.0));
        for &(i, j, m) in &self.terms {
            let phase = -(m[0] as f64 * x[0] + m[1] as f64 * x[1]);
            h[(i, j)] -= Complex64::from_polar(1.0 / self.degrees[i] as f64, phase);
        }
        h
    }

    /// Sorted eigenvalues and eigenvectors; each eigenvector's largest component is real positive.
    pub fn eigen(&self, x: [f64; 2]) -> (Vec<f64>, Vec<DVector<Complex64>>) {
        let h = self.evaluate(x);
        let eig = nalgebra::SymmetricEigen::new(h);
        let mut pairs: Vec<(f64, DVector<Complex64>)> = (0..self.bands())
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).into_owned()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (values, vectors) = pairs
            .into_iter()
            .map(|(l, v)| {
                let big = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or_default();
                let phase = if big.norm() > 0.0 { big.conj() / big.norm() } else { Complex64::new(1.0, 0.0) };
                (l, v * phase)
            })
            .unzip();
        (values, vectors)
    }

    /// `det(H₀(x) − λ)`.
    pub fn det(&self, x: [f64; 2], lambda: f64) -> f64 {
        let mut h = self.evaluate(x);
        for i in 0..self.bands() {
            h[(i, i)] -= Complex64::new(lambda, 0.0);
        }
        h.determinant().re
    }

    /// Symbol entry for a shift between two vertices, as used by lattice Green's functions.
    pub fn cell_shift(a: VertexId, b: VertexId) -> [i32; 2] {
        [a.n1 - b.n1, a.n2 - b.n2]
    }
}

pub fn char_poly(lattice: PeriodicLattice, x: [f64; 2], lambda: f64) -> f64 {
    lattice.char_poly(x, lambda)
}

/// One closed component of a Fermi sheet, sampled uniformly in arc length.
#[derive(Clone, Debug, Serialize)]
pub struct FermiComponent {
    pub points: Vec<[f64; 2]>,
    /// `1 / |∇λ_j|`.
    pub weights: Vec<f64>,
    pub tangents: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 2]>,
    /// Signed curvature for the traversal direction `(−∂₂g, ∂₁g)`.
    pub curvature: Vec<f64>,
    pub length: f64,
    /// Total turning `∫ κ ds`: `±2π` for a contractible loop, 0 for a loop winding the torus.
    pub turning: f64,
    /// Winding vector of the loop on the torus.
    pub winding: [i32; 2],
}

impl FermiComponent {
    pub fn step(&self) -> f64 {
        self.length / self.points.len() as f64
    }

    /// Curvature multiplied by the sign of the total turning (0 when the loop winds the torus).
    pub fn oriented_curvature(&self) -> Vec<f64> {
        let sign = if self.turning > PI { 1.0 } else if self.turning < -PI { -1.0 } else { 0.0 };
        self.curvature.iter().map(|k| k * sign).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FermiSample {
    pub lattice: PeriodicLattice,
    pub lambda: f64,
    pub sheet: usize,
    pub level: f64,
    pub components: Vec<FermiComponent>,
}

impl FermiSample {
    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.components.iter().flat_map(|c| c.points.iter().copied())
    }

    /// Largest `|p(x, λ)|` over all samples.
    pub fn residual(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.points.iter())
            .map(|&x| (self.lattice.base().value(x) - self.level).abs())
            .fold(0.0, f64::max)
    }
}

/// Minimum `|∇g|` tolerated on a traced curve.
pub const GRADIENT_FLOOR: f64 = 1e-6;
/// Arc-length step used for tracing.
const TRACE_STEP: f64 = 2e-3;
const SEED_GRID: usize = 64;

fn unit(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

fn tangent(base: BaseFunction, x: [f64; 2]) -> [f64; 2] {
    let g = base.gradient(x);
    unit([-g[1], g[0]])
}

fn newton_project(base: BaseFunction, level: f64, mut x: [f64; 2]) -> Result<[f64; 2]> {
    for _ in 0..30 {
        let r = base.value(x) - level;
        let g = base.gradient(x);
        let n2 = g[0] * g[0] + g[1] * g[1];
        if n2.sqrt() < GRADIENT_FLOOR {
            return Err(Error::DegenerateGradient(x));
        }
        x = [x[0] - r * g[0] / n2, x[1] - r * g[1] / n2];
        if r.abs() < 1e-15 {
            break;
        }
    }
    Ok(x)
}

fn rk4_step(base: BaseFunction, x: [f64; 2], h: f64) -> [f64; 2] {
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
    let k1 = tangent(base, x);
    let k2 = tangent(base, add(x, k1, h / 2.0));
    let k3 = tangent(base, add(x, k2, h / 2.0));
    let k4 = tangent(base, add(x, k3, h));
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

fn advance(base: BaseFunction, level: f64, x: [f64; 2], h: f64) -> Result<[f64; 2]> {
    newton_project(base, level, rk4_step(base, x, h))
}

/// Wrap into `[0, 2π)²`.
pub fn wrap(x: [f64; 2]) -> [f64; 2] {
    [x[0].rem_euclid(TAU), x[1].rem_euclid(TAU)]
}

fn torus_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = |s: f64| {
        let r = s.rem_euclid(TAU);
        r.min(TAU - r)
    };
    d(a[0] - b[0]).hypot(d(a[1] - b[1]))
}

/// Trace a closed loop from `start`; returns its length and winding vector.
fn loop_length(base: BaseFunction, level: f64, start: [f64; 2]) -> Result<(f64, [i32; 2], Vec<[f64; 2]>)> {
    let t0 = tangent(base, start);
    let h = trace_step(base, start)?;
    let mut x = start;
    let mut s = 0.0;
    let mut path = vec![start];
    let max_steps = (64.0 * TAU / h) as usize;
    for _ in 0..max_steps {
        let next = advance(base, level, x, h)?;
        let shift = [((next[0] - start[0]) / TAU).round(), ((next[1] - start[1]) / TAU).round()];
        let rel = |p: [f64; 2]| [p[0] - start[0] - shift[0] * TAU, p[1] - start[1] - shift[1] * TAU];
        let (a, b) = (rel(x), rel(next));
        let (pa, pb) = (a[0] * t0[0] + a[1] * t0[1], b[0] * t0[0] + b[1] * t0[1]);
        if s > 10.0 * h && pa < 0.0 && pb >= 0.0 && b[0].hypot(b[1]) < 4.0 * h {
            // Crossing the normal line through the start point: refine the last partial step.
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let p = rel(advance(base, level, x, mid)?);
                if p[0] * t0[0] + p[1] * t0[1] < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok((s + 0.5 * (lo + hi), [shift[0] as i32, shift[1] as i32], path));
        }
        s += h;
        x = next;
        path.push(x);
    }
    Err(Error::Geometry(format!("level curve through {start:?} did not close")))
}

/// Arc-length step: the default, shrunk so that tiny loops get enough steps.
fn trace_step(base: BaseFunction, x: [f64; 2]) -> Result<f64> {
    let k = level_curvature_base(base, x)?.abs();
    Ok(TRACE_STEP.min(0.02 / k.max(1e-300)))
}

fn seeds(base: BaseFunction, level: f64) -> Result<Vec<[f64; 2]>> {
    let n = SEED_GRID;
    let step = TAU / n as f64;
    let f = |i: usize, j: usize| base.value([i as f64 * step, j as f64 * step]) - level;
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for (di, dj) in [(1usize, 0usize), (0, 1)] {
                let (a, b) = (f(i, j), f(i + di, j + dj));
                if (a < 0.0) != (b < 0.0) {
                    let t = a / (a - b);
                    let x = [(i as f64 + t * di as f64) * step, (j as f64 + t * dj as f64) * step];
                    out.push(newton_project(base, level, x)?);
                }
            }
        }
    }
    // Loops too small for the grid: cast a ray from every extremum.
    for &c in base.extrema() {
        let f0 = base.value(c) - level;
        let ray = |t: f64| [c[0] + t, c[1]];
        let fine = step / 16.0;
        let mut t = fine;
        while t <= step {
            if (base.value(ray(t)) - level < 0.0) != (f0 < 0.0) {
                let (mut lo, mut hi) = (t - fine, t);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if (base.value(ray(mid)) - level < 0.0) == (f0 < 0.0) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                out.push(newton_project(base, level, ray(0.5 * (lo + hi)))?);
                break;
            }
            t += fine;
        }
    }
    Ok(out)
}

/// Sample sheet `sheet` (1-based) of `M_λ` with `count` points per closed component.
pub fn fermi_sample(lattice: PeriodicLattice, lambda: f64, sheet: usize, count: usize) -> Result<FermiSample> {
    if count < 3 {
        return Err(Error::Geometry("at least three samples per component".into()));
    }
    let all = lattice.all_sheets(lambda);
    let sh = *all.get(sheet.wrapping_sub(1)).ok_or(Error::EmptyLevelSet(lambda))?;
    let (lo, hi) = sh.base.range();
    if sh.level < lo || sh.level > hi {
        return Err(Error::EmptyLevelSet(lambda));
    }
    for &c in sh.base.critical_values() {
        let distance = (sh.level - c).abs();
        if distance < 1e-9 {
            let (_, threshold) = lattice.threshold_distance(lambda);
            return Err(Error::NearThreshold { lambda, threshold, distance });
        }
    }
    if sh.slope.abs() < 1e-12 {
        return Err(Error::DegenerateGradient([f64::NAN, f64::NAN]));
    }
    let mut pending = seeds(sh.base, sh.level)?;
    if pending.is_empty() {
        return Err(Error::EmptyLevelSet(lambda));
    }
    let mut components = Vec::new();
    let claim = TAU / SEED_GRID as f64;
    while let Some(start) = pending.pop() {
        let (length, winding, path) = loop_length(sh.base, sh.level, start)?;
        pending.retain(|s| path.iter().all(|p| torus_distance(*p, *s) > claim));
        components.push(resample(sh, length, winding, start, count)?);
    }
    components.sort_by(|a, b| {
        let (p, q) = (wrap(a.points[0]), wrap(b.points[0]));
        p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1]))
    });
    Ok(FermiSample { lattice, lambda, sheet, level: sh.level, components })
}

fn resample(sh: Sheet, length: f64, winding: [i32; 2], start: [f64; 2], count: usize) -> Result<FermiComponent> {
    let spacing = length / count as f64;
    let sub = (spacing / trace_step(sh.base, start)?).ceil().max(1.0) as usize;
    let h = spacing / sub as f64;
    let mut x = start;
    let mut comp = FermiComponent {
        points: Vec::with_capacity(count),
        weights: Vec::with_capacity(count),
        tangents: Vec::with_capacity(count),
        normals: Vec::with_capacity(count),
        curvature: Vec::with_capacity(count),
        length,
        turning: 0.0,
        winding,
    };
    for _ in 0..count {
        let g = sh.base.gradient(x);
        let norm = g[0].hypot(g[1]);
        if norm < GRADIENT_FLOOR {
            return Err(Error::DegenerateGradient(x));
        }
        let k = level_curvature_base(sh.base, x)?;
        comp.points.push(x);
        comp.weights.push(sh.slope.abs() / norm);
        comp.tangents.push([-g[1] / norm, g[0] / norm]);
        comp.normals.push([g[0] / norm, g[1] / norm]);
        comp.curvature.push(k);
        comp.turning += k * spacing;
        for _ in 0..sub {
            x = advance(sh.base, sh.level, x, h)?;
        }
    }
    Ok(comp)
}

/// Finite-difference step for curvature.
pub const CURVATURE_STEP: f64 = 1e-5;

fn level_curvature_base(base: BaseFunction, x: [f64; 2]) -> Result<f64> {
    let h = CURVATURE_STEP;
    let g = |dx: f64, dy: f64| base.value([x[0] + dx, x[1] + dy]);
    let g0 = g(0.0, 0.0);
    let gx = (g(h, 0.0) - g(-h, 0.0)) / (2.0 * h);
    let gy = (g(0.0, h) - g(0.0, -h)) / (2.0 * h);
    let gxx = (g(h, 0.0) - 2.0 * g0 + g(-h, 0.0)) / (h * h);
    let gyy = (g(0.0, h) - 2.0 * g0 + g(0.0, -h)) / (h * h);
    let gxy = (g(h, h) - g(h, -h) - g(-h, h) + g(-h, -h)) / (4.0 * h * h);
    let n = gx.hypot(gy);
    if n < GRADIENT_FLOOR {
        return Err(Error::DegenerateGradient(x));
    }
    Ok((gxx * gy * gy - 2.0 * gxy * gx * gy + gyy * gx * gx) / n.powi(3))
}

/// Signed curvature at `x` of the sheet through `x`, for the traversal direction `(−∂₂g, ∂₁g)`.
pub fn level_curvature(lattice: PeriodicLattice, lambda: f64, sheet: usize, x: [f64; 2]) -> Result<f64> {
    let sh = *lattice.all_sheets(lambda).get(sheet.wrapping_sub(1)).ok_or(Error::EmptyLevelSet(lambda))?;
    let r = (sh.base.value(x) - sh.level).abs();
    if r > 1e-6 {
        return Err(Error::Geometry(format!("point {x:?} is {r:e} off the level set")));
    }
    level_curvature_base(sh.base, x)
}

/// Convexity verdict for all sheets at one energy.
#[derive(Clone, Debug, Serialize)]
pub struct ConvexityCheck {
    pub lambda: f64,
    pub convex: bool,
    /// Smallest oriented curvature over all samples, relative to the largest.
    pub min_relative_curvature: f64,
    pub components: usize,
    pub note: Option<String>,
}

/// Minimum relative oriented curvature treated as strictly positive.
pub const STRICT_CURVATURE: f64 = 1e-9;

pub fn check_convexity(lattice: PeriodicLattice, lambda: f64, count: usize) -> ConvexityCheck {
    let sheets = lattice.all_sheets(lambda);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut components = 0;
    for (idx, sh) in sheets.iter().enumerate() {
        let (rlo, rhi) = sh.base.range();
        if sh.level <= rlo || sh.level >= rhi {
            continue;
        }
        match fermi_sample(lattice, lambda, idx + 1, count) {
            Ok(sample) => {
                for c in &sample.components {
                    components += 1;
                    for k in c.oriented_curvature() {
                        lo = lo.min(k);
                        hi = hi.max(k.abs());
                    }
                }
            }
            Err(e) => {
                return ConvexityCheck {
                    lambda,
                    convex: false,
                    min_relative_curvature: 0.0,
                    components,
                    note: Some(e.to_string()),
                }
            }
        }
    }
    if components == 0 {
        return ConvexityCheck {
            lambda,
            convex: false,
            min_relative_curvature: 0.0,
            components,
            note: Some("empty Fermi set".into()),
        };
    }
    let rel = if hi > 0.0 { lo / hi } else { 0.0 };
    ConvexityCheck { lambda, convex: rel > STRICT_CURVATURE, min_relative_curvature: rel, components, note: None }
}

/// How a tabulated window is stated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum WindowForm {
    /// A fixed open interval.
    Exact,
    /// `(anchor − ε, anchor)`.
    Below { anchor: f64 },
    /// `(anchor, anchor + ε)`.
    Above { anchor: f64 },
    /// `(anchor − ε, anchor + ε) \ {anchor}`.
    Around { anchor: f64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexWindow {
    pub lo: f64,
    pub hi: f64,
    pub excluded: Vec<f64>,
    pub form: WindowForm,
    /// Certified `ε` for the ε-qualified forms.
    pub epsilon: Option<f64>,
}

impl ConvexWindow {
    fn exact(lo: f64, hi: f64, excluded: Vec<f64>) -> Self {
        ConvexWindow { lo, hi, excluded, form: WindowForm::Exact, epsilon: None }
    }

    fn qualified(form: WindowForm) -> Self {
        let (lo, hi, excluded) = match form {
            WindowForm::Below { anchor } => (anchor, anchor, vec![]),
            WindowForm::Above { anchor } => (anchor, anchor, vec![]),
            WindowForm::Around { anchor } => (anchor, anchor, vec![anchor]),
            WindowForm::Exact => unreachable!("qualified windows carry an anchor"),
        };
        ConvexWindow { lo, hi, excluded, form, epsilon: None }
    }

    /// `n` energies strictly inside the window, away from excluded points.
    pub fn sample_energies(&self, n: usize) -> Vec<f64> {
        let (lo, hi, eps) = match self.form {
            WindowForm::Exact => (self.lo, self.hi, 0.0),
            _ => {
                let e = self.epsilon.unwrap_or(0.0);
                match self.form {
                    WindowForm::Below { anchor } => (anchor - e, anchor, e),
                    WindowForm::Above { anchor } => (anchor, anchor + e, e),
                    WindowForm::Around { anchor } => (anchor - e, anchor + e, e),
                    WindowForm::Exact => unreachable!(),
                }
            }
        };
        let _ = eps;
        let mut cuts = vec![lo];
        cuts.extend(self.excluded.iter().copied().filter(|x| *x > lo && *x < hi));
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        let pieces: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
        (0..n)
            .map(|i| {
                let (a, b) = pieces[i % pieces.len()];
                let t = (i / pieces.len() + 1) as f64 / ((n + pieces.len() - 1) / pieces.len() + 1) as f64;
                a + (b - a) * t
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexWindowTable {
    pub lattice: PeriodicLattice,
    pub windows: Vec<ConvexWindow>,
}

/// The tabulated windows as stated, without certification.
pub fn stated_windows(lattice: PeriodicLattice) -> Vec<ConvexWindow> {
    use WindowForm::*;
    let r = 0.5f64.sqrt();
    match lattice {
        PeriodicLattice::Square => vec![ConvexWindow::exact(-1.0, 0.0, vec![]), ConvexWindow::exact(0.0, 1.0, vec![])],
        PeriodicLattice::Subdivision => vec![ConvexWindow::exact(-1.0, 1.0, vec![-r, 0.0, r])],
        PeriodicLattice::Ladder => vec![ConvexWindow::exact(-1.0, 1.0, vec![-0.2, 0.2])],
        PeriodicLattice::Triangular => {
            vec![ConvexWindow::qualified(Above { anchor: -1.0 }), ConvexWindow::qualified(Below { anchor: 0.5 })]
        }
        PeriodicLattice::Hexagonal => vec![
            ConvexWindow::qualified(Above { anchor: -1.0 }),
            ConvexWindow::qualified(Around { anchor: 0.0 }),
            ConvexWindow::qualified(Below { anchor: 1.0 }),
        ],
        PeriodicLattice::Kagome => vec![
            ConvexWindow::qualified(Above { anchor: -1.0 }),
            ConvexWindow::qualified(Around { anchor: -0.25 }),
            ConvexWindow::qualified(Below { anchor: 0.5 }),
        ],
        PeriodicLattice::Graphite => vec![
            ConvexWindow::qualified(Above { anchor: -1.0 }),
            ConvexWindow::qualified(Around { anchor: -0.5 }),
            ConvexWindow::qualified(Around { anchor: 0.5 }),
            ConvexWindow::qualified(Around { anchor: -0.25 }),
            ConvexWindow::qualified(Around { anchor: 0.25 }),
            ConvexWindow::qualified(Below { anchor: 1.0 }),
        ],
    }
}

/// Samples per component used while certifying ε.
const CERTIFY_SAMPLES: usize = 96;

fn side_convex(lattice: PeriodicLattice, anchor: f64, dir: f64, eps: f64) -> bool {
    // Probe a few energies across (anchor, anchor + dir·eps].
    [1.0, 0.5, 0.1].iter().all(|t| check_convexity(lattice, anchor + dir * eps * t, CERTIFY_SAMPLES).convex)
}

/// Largest `ε ≤ cap` (up to bisection resolution) for which energies on the `dir` side of
/// `anchor` give strictly convex Fermi curves.
fn certify_side(lattice: PeriodicLattice, anchor: f64, dir: f64) -> f64 {
    let cap = lattice
        .thresholds()
        .into_iter()
        .filter(|t| (t - anchor) * dir > 1e-12)
        .map(|t| (t - anchor).abs())
        .fold(1.0f64, f64::min)
        .min((1.0 - anchor * dir).max(0.0))
        * 0.999;
    if cap <= 0.0 {
        return 0.0;
    }
    if side_convex(lattice, anchor, dir, cap) {
        return cap;
    }
    let (mut good, mut bad) = (0.0, cap);
    let mut e = cap;
    for _ in 0..12 {
        e *= 0.5;
        if side_convex(lattice, anchor, dir, e) {
            good = e;
            break;
        }
        bad = e;
    }
    if good == 0.0 {
        return 0.0;
    }
    for _ in 0..12 {
        let mid = 0.5 * (good + bad);
        if side_convex(lattice, anchor, dir, mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    good
}

/// The tabulated windows with a numerically certified `ε` for every ε-qualified entry.
pub fn convex_windows(lattice: PeriodicLattice) -> ConvexWindowTable {
    let windows = stated_windows(lattice)
        .into_iter()
        .map(|mut w| {
            let eps = match w.form {
                WindowForm::Exact => None,
                WindowForm::Below { anchor } => Some(certify_side(lattice, anchor, -1.0)),
                WindowForm::Above { anchor } => Some(certify_side(lattice, anchor, 1.0)),
                WindowForm::Around { anchor } => {
                    Some(certify_side(lattice, anchor, -1.0).min(certify_side(lattice, anchor, 1.0)))
                }
            };
            if let Some(e) = eps {
                w.epsilon = Some(e);
                match w.form {
                    WindowForm::Below { anchor } => w.lo = anchor - e,
                    WindowForm::Above { anchor } => w.hi = anchor + e,
                    WindowForm::Around { anchor } => {
                        w.lo = anchor - e;
                        w.hi = anchor + e;
                    }
                    WindowForm::Exact => {}
                }
            }
            w
        })
        .collect();
    ConvexWindowTable { lattice, windows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hexagonal_symbol_determinant_matches_table() {
        let s = symbol_of(LatticeKind::Hexagonal).unwrap();
        for &(x, l) in &[([0.3, -1.2], 0.4), ([2.0, 1.0], -0.7), ([0.0, 0.0], 1.0)] {
            let want = PeriodicLattice::Hexagonal.char_poly(x, l);
            assert!((s.det(x, l) - want).abs() < 1e-12);
        }
        assert!(PeriodicLattice::Hexagonal.char_poly([0.0, 0.0], 1.0).abs() < 1e-15);
        assert!(PeriodicLattice::Hexagonal.char_poly([0.0, 0.0], -1.0).abs() < 1e-15);
    }

    #[test]
    fn square_and_triangular_symbols_are_scalar() {
        for (kind, lat) in [(LatticeKind::Square, PeriodicLattice::Square), (LatticeKind::Triangular, PeriodicLattice::Triangular)] {
            let s = symbol_of(kind).unwrap();
            let x = [0.7, 2.1];
            assert!((s.det(x, 0.2) - lat.char_poly(x, 0.2)).abs() < 1e-14);
        }
    }

    #[test]
    fn base_ranges() {
        let b = BaseFunction::B2;
        assert!((b.value([4.0 * PI / 3.0, 2.0 * PI / 3.0]) + 1.5).abs() < 1e-14);
        assert!((b.value([0.0, 0.0]) - 3.0).abs() < 1e-14);
        assert!((BaseFunction::A2.value([PI, PI]) + 2.0).abs() < 1e-14);
    }

    #[test]
    fn hexagonal_fermi_curve_near_band_top_is_one_loop() {
        let s = fermi_sample(PeriodicLattice::Hexagonal, 0.95, 1, 256).unwrap();
        assert_eq!(s.components.len(), 1);
        assert!(s.residual() < 1e-10);
        let c = &s.components[0];
        assert!((c.turning.abs() - TAU).abs() < 1e-3);
        assert_eq!(c.winding, [0, 0]);
    }

    #[test]
    fn square_zero_energy_is_degenerate() {
        assert!(matches!(fermi_sample(PeriodicLattice::Square, 0.0, 1, 64), Err(Error::NearThreshold { .. })));
    }

    #[test]
    fn band_edge_is_empty_or_a_point() {
        assert!(fermi_sample(PeriodicLattice::Hexagonal, 1.0, 1, 64).is_err());
    }
}

//! Potential reconstruction on the hexagonal parallelogram from its D-N map.
//!
//! Probing solutions vanish on one side of a diagonal line and take values `±1` along it. An
//! A-probe for line `A_k` prescribes `f(α_k) = 1`, zero Dirichlet data on the top, bottom and
//! left sides, zero Neumann data on the left side and leaves the right side free. A B-probe for
//! `B_ℓ` prescribes `f(β_ℓ) = 1`, Neumann data on the bottom side plus the corner `2ω⁴`, and
//! leaves the top side plus the top-right corner free. The sweep peels potential values from
//! those solutions line by line, then repeats on the D-N map of the point-reflected domain to
//! reach the vertices the first pass cannot see.

use crate::bvp::{assemble, column_order, step_four_point, Convention, DnMap, Potential};
use crate::error::{Error, Result};
use crate::lattice::VertexId;
use crate::parallelogram::{level_a, level_m, level_x, HexParallelogram};
use crate::precision::{Dense, Lu, Real};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineFamily {
    /// Lines `x1 + √3 x2 = a_k` through `α_k`; the solution vanishes below.
    A,
    /// Lines `x1 − √3 x2 = b_ℓ` through `β_ℓ`; the solution vanishes above.
    B,
    /// Vertical lines through the bottom vertices; the solution vanishes to the left. Data sit
    /// on the bottom side, with the Neumann and free sides of the A-probe.
    Vertical,
}

/// Boundary data of one probe: Dirichlet values off the free side, the Neumann side (zero
/// data) and the free side, all as boundary positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeData {
    pub family: LineFamily,
    pub index: usize,
    pub dirichlet: BTreeMap<VertexId, f64>,
    pub neumann: Vec<VertexId>,
    pub free: Vec<VertexId>,
}

pub fn probe_data(par: &HexParallelogram, family: LineFamily, index: usize) -> Result<ProbeData> {
    if index > par.size() {
        return Err(Error::Geometry(format!("line index {index} outside 0..={}", par.size())));
    }
    let (source, neumann, free) = match family {
        LineFamily::A => (par.alpha(index), par.left().to_vec(), par.right().to_vec()),
        LineFamily::B => {
            let mut neumann = par.bottom().to_vec();
            neumann.push(par.left()[0]);
            let mut free = par.top().to_vec();
            free.push(*par.right().last().expect("nonempty side"));
            (par.beta(index), neumann, free)
        }
        LineFamily::Vertical => (par.bottom()[index], par.left().to_vec(), par.right().to_vec()),
    };
    let free_set: BTreeSet<VertexId> = free.iter().copied().collect();
    let dirichlet = par
        .region()
        .boundary()
        .iter()
        .filter(|v| !free_set.contains(v))
        .map(|&v| (v, if v == source { 1.0 } else { 0.0 }))
        .collect();
    Ok(ProbeData { family, index, dirichlet, neumann, free })
}

/// Whether the probe for `(family, index)` is forced to vanish at `v`.
pub fn in_zero_region(par: &HexParallelogram, family: LineFamily, index: usize, v: VertexId) -> bool {
    match family {
        LineFamily::A => level_a(v) < par.a_level(index),
        LineFamily::B => level_m(v) > par.b_level(index),
        LineFamily::Vertical => level_x(v) < par.x_level(index),
    }
}

pub fn on_line(par: &HexParallelogram, family: LineFamily, index: usize, v: VertexId) -> bool {
    match family {
        LineFamily::A => level_a(v) == par.a_level(index),
        LineFamily::B => level_m(v) == par.b_level(index),
        LineFamily::Vertical => level_x(v) == par.x_level(index),
    }
}

#[derive(Clone, Debug)]
pub struct ProbeSolution<T> {
    pub family: LineFamily,
    pub index: usize,
    /// Full boundary trace in the region's boundary order.
    pub boundary_data: Vec<T>,
    /// Values on `D` that the chosen mode determines.
    pub values: BTreeMap<VertexId, T>,
}

pub enum ProbeSource<'a, T> {
    /// Direct solve of the mixed problem with a known potential.
    Forward { potential: &'a Potential, lambda: f64 },
    /// Completion from the D-N map, then propagation with the listed potential values (`Q`).
    Inverse { dn: &'a DnMap<T>, known_q: &'a BTreeMap<VertexId, T> },
}

pub fn probe_solution<T: Real>(
    par: &HexParallelogram,
    source: ProbeSource<'_, T>,
    family: LineFamily,
    index: usize,
) -> Result<ProbeSolution<T>> {
    let data = probe_data(par, family, index)?;
    match source {
        ProbeSource::Forward { potential, lambda } => forward_probe(par, potential, lambda, &data),
        ProbeSource::Inverse { dn, known_q } => {
            let boundary_data = complete_probe(par, dn, &data)?;
            let g = dn.apply(&boundary_data);
            let values = peel(par, &data, &boundary_data, &g, &mut known_q.clone(), None, None)?;
            Ok(ProbeSolution { family, index, boundary_data, values })
        }
    }
}

fn line_label(family: LineFamily, index: usize) -> String {
    match family {
        LineFamily::A => format!("A_{index}"),
        LineFamily::B => format!("B_{index}"),
        LineFamily::Vertical => format!("X_{index}"),
    }
}

/// Full boundary data of a probe from the D-N map (modified convention).
pub fn complete_probe<T: Real>(par: &HexParallelogram, dn: &DnMap<T>, data: &ProbeData) -> Result<Vec<T>> {
    if dn.convention != Convention::Modified {
        return Err(Error::Geometry("probes need the modified D-N map".into()));
    }
    let region = par.region();
    let mut f = vec![T::zero(); region.boundary().len()];
    for (&v, &x) in &data.dirichlet {
        f[region.boundary_position(v).ok_or(Error::NotBoundary(v))?] = T::from_f64(x);
    }
    let neumann = par.boundary_indices(&data.neumann)?;
    let free = par.boundary_indices(&data.free)?;
    let g = vec![T::zero(); neumann.len()];
    dn.complete_boundary_data(&f, &neumann, &g, &free, &line_label(data.family, data.index))
}

fn forward_probe<T: Real>(
    par: &HexParallelogram,
    potential: &Potential,
    lambda: f64,
    data: &ProbeData,
) -> Result<ProbeSolution<T>> {
    let region = par.region();
    let sys = assemble::<T>(region, potential, lambda, Convention::Modified)?;
    let ni = region.interior().len();
    let free = par.boundary_indices(&data.free)?;
    let neumann = par.boundary_indices(&data.neumann)?;
    let nb = region.boundary().len();
    let mut known = vec![T::zero(); nb];
    for (&v, &x) in &data.dirichlet {
        known[region.boundary_position(v).ok_or(Error::NotBoundary(v))?] = T::from_f64(x);
    }
    // Unknowns: interior values, then the free boundary values.
    let size = ni + free.len();
    if ni + neumann.len() != size {
        return Err(Error::Geometry("mixed problem is not square".into()));
    }
    let mut m = Dense::<T>::zeros(size, size);
    let mut rhs = vec![T::zero(); size];
    for i in 0..ni {
        for j in 0..ni {
            m[(i, j)] = sys.h00[(i, j)];
        }
        for (c, &j) in free.iter().enumerate() {
            m[(i, ni + c)] = sys.h01[(i, j)];
        }
        for j in 0..nb {
            rhs[i] -= sys.h01[(i, j)] * known[j];
        }
    }
    for (r, &b) in neumann.iter().enumerate() {
        let row = ni + r;
        for j in 0..ni {
            m[(row, j)] = sys.h10[(b, j)];
        }
        for (c, &j) in free.iter().enumerate() {
            m[(row, ni + c)] = sys.h11[(b, j)];
        }
        for j in 0..nb {
            rhs[row] -= sys.h11[(b, j)] * known[j];
        }
    }
    let lu = Lu::factor(&m).map_err(|_| Error::SingularBlock {
        block: format!("mixed problem for {}", line_label(data.family, data.index)),
        condition: f64::INFINITY,
    })?;
    let x = lu.solve(&rhs);
    let mut boundary_data = known;
    for (c, &j) in free.iter().enumerate() {
        boundary_data[j] = x[ni + c];
    }
    let mut values: BTreeMap<VertexId, T> =
        region.interior().iter().copied().zip(x[..ni].iter().copied()).collect();
    values.extend(region.boundary().iter().copied().zip(boundary_data.iter().copied()));
    Ok(ProbeSolution { family: data.family, index: data.index, boundary_data, values })
}

/// Values of a single potential-harvest event.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Harvest {
    pub vertex: VertexId,
    pub q: f64,
    pub central_value: f64,
    pub on_line: bool,
}

/// Smallest central value a potential may be divided by off the probe line.
pub const HARVEST_FLOOR: f64 = 0.5;

/// Central values below this are never divided by, even as a last resort.
pub const FALLBACK_FLOOR: f64 = 1e-6;

/// Best sub-floor harvest seen per vertex: `(|u(z)|, Q(z))`.
type Fallback<T> = BTreeMap<VertexId, (f64, T)>;

/// Propagate a probe from its trace `f` and `g = Λf`, harvesting `Q` wherever the four-point
/// relation has a known, non-small central value and no unknown periphery.
fn peel<T: Real>(
    par: &HexParallelogram,
    data: &ProbeData,
    f: &[T],
    g: &[T],
    known_q: &mut BTreeMap<VertexId, T>,
    mut harvests: Option<&mut Vec<Harvest>>,
    mut fallback: Option<&mut Fallback<T>>,
) -> Result<BTreeMap<VertexId, T>> {
    let region = par.region();
    let (family, index) = (data.family, data.index);
    let mut u: BTreeMap<VertexId, T> = BTreeMap::new();
    let mut zeros = BTreeSet::new();
    for &v in region.interior() {
        if in_zero_region(par, family, index, v) {
            u.insert(v, T::zero());
            zeros.insert(v);
        }
    }
    for (i, &v) in region.boundary().iter().enumerate() {
        u.insert(v, f[i]);
        let nbrs = region.neighbors(v)?;
        if let [w] = nbrs {
            u.entry(*w).or_insert(f[i] - g[i]);
        }
    }
    let order = column_order(region.interior(), |v| par.graph().position(v));
    loop {
        let mut progressed = false;
        for &z in &order {
            let q = |v: VertexId| if zeros.contains(&v) { Some(T::zero()) } else { known_q.get(&v).copied() };
            if step_four_point(region, &q, &mut u, z)?.is_some() {
                progressed = true;
                continue;
            }
            if zeros.contains(&z) || known_q.contains_key(&z) {
                continue;
            }
            let Some(&uz) = u.get(&z) else { continue };
            let nbrs = region.neighbors(z)?;
            if nbrs.iter().any(|w| !u.contains_key(w)) {
                continue;
            }
            let line = on_line(par, family, index, z);
            let magnitude = uz.to_f64().abs();
            if line && (magnitude - 1.0).abs() > 1e-6 {
                return Err(Error::Inconsistent { vertex: z, first: magnitude, second: 1.0 });
            }
            let mut sum = T::zero();
            for w in nbrs {
                sum += u[w];
            }
            let qz = sum / (T::from_f64(nbrs.len() as f64) * uz) - T::one();
            if magnitude < HARVEST_FLOOR {
                if let Some(fb) = fallback.as_deref_mut() {
                    if magnitude > fb.get(&z).map_or(0.0, |c| c.0) {
                        fb.insert(z, (magnitude, qz));
                    }
                }
                continue;
            }
            known_q.insert(z, qz);
            if let Some(h) = harvests.as_deref_mut() {
                h.push(Harvest { vertex: z, q: qz.to_f64(), central_value: uz.to_f64(), on_line: line });
            }
            progressed = true;
        }
        if !progressed {
            return Ok(u);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LineLog {
    pub pass: usize,
    pub line: String,
    pub sigma_min: f64,
    pub recovered: Vec<Harvest>,
}

#[derive(Clone, Debug)]
pub struct Reconstruction<T> {
    pub lambda: f64,
    /// `Q` at every interior vertex.
    pub q: BTreeMap<VertexId, T>,
    /// Vertices whose value came from the rotated pass only.
    pub rotation_filled: Vec<VertexId>,
    /// Largest disagreement between the two passes on vertices both recovered.
    pub rotation_discrepancy: f64,
    pub log: Vec<LineLog>,
}

impl<T: Real> Reconstruction<T> {
    /// `V = Q + λ + 1`.
    pub fn potential(&self) -> Potential {
        let lambda = T::from_f64(self.lambda);
        Potential::new(self.q.iter().map(|(v, q)| (*v, (*q + lambda + T::one()).to_f64())).collect())
    }
}

/// One sweep `k = N, …, 0` over A- and B-probes.
fn sweep<T: Real>(
    par: &HexParallelogram,
    dn: &DnMap<T>,
    pass: usize,
    known_q: &mut BTreeMap<VertexId, T>,
    log: &mut Vec<LineLog>,
    fallback: &mut Fallback<T>,
) -> Result<()> {
    for k in (0..=par.size()).rev() {
        for family in [LineFamily::A, LineFamily::B] {
            let data = probe_data(par, family, k)?;
            let f = complete_probe(par, dn, &data)?;
            let g = dn.apply(&f);
            let rows = par.boundary_indices(&data.neumann)?;
            let cols = par.boundary_indices(&data.free)?;
            let (sigma_min, _) = dn.block_conditioning(&rows, &cols);
            let mut recovered = Vec::new();
            peel(par, &data, &f, &g, known_q, Some(&mut recovered), Some(fallback))?;
            log.push(LineLog { pass, line: line_label(family, k), sigma_min, recovered });
        }
    }
    Ok(())
}

/// Repeat sweeps while they harvest new values.
fn sweep_to_fixpoint<T: Real>(
    par: &HexParallelogram,
    dn: &DnMap<T>,
    pass: usize,
    known_q: &mut BTreeMap<VertexId, T>,
    log: &mut Vec<LineLog>,
    fallback: &mut Fallback<T>,
) -> Result<()> {
    loop {
        let before = known_q.len();
        sweep(par, dn, pass, known_q, log, fallback)?;
        if known_q.len() == before || known_q.len() == par.region().interior().len() {
            return Ok(());
        }
    }
}

/// Recover `Q` on the interior of the parallelogram from its modified-convention D-N map.
pub fn reconstruct_potential<T: Real>(par: &HexParallelogram, dn: &DnMap<T>) -> Result<Reconstruction<T>> {
    if dn.boundary != par.region().boundary() {
        return Err(Error::Geometry("D-N map boundary order differs from the parallelogram".into()));
    }
    let mut log = Vec::new();
    let mut q = BTreeMap::new();
    let mut fallback = Fallback::new();
    sweep_to_fixpoint(par, dn, 0, &mut q, &mut log, &mut fallback)?;

    let perm = par.boundary_rotation();
    let rotated = DnMap {
        lambda: dn.lambda,
        boundary: dn.boundary.clone(),
        convention: dn.convention,
        matrix: dn.matrix.sub_matrix(&perm, &perm),
    };
    let mut q_rot = BTreeMap::new();
    let mut fallback_rot = Fallback::new();
    sweep_to_fixpoint(par, &rotated, 1, &mut q_rot, &mut log, &mut fallback_rot)?;

    let mut rotation_filled = Vec::new();
    let mut rotation_discrepancy: f64 = 0.0;
    for (v, value) in q_rot {
        let w = par.rotate(v);
        match q.get(&w) {
            Some(&first) => rotation_discrepancy = rotation_discrepancy.max((first - value).to_f64().abs()),
            None => {
                q.insert(w, value);
                rotation_filled.push(w);
            }
        }
    }
    // Alternate between the two orientations, sharing what is known. When neither moves, take
    // the best-conditioned small-central-value harvest of an unresolved vertex and go on.
    let total = par.region().interior().len();
    let mut pass = 2;
    while q.len() < total {
        let before = q.len();
        sweep_to_fixpoint(par, dn, pass, &mut q, &mut log, &mut fallback)?;
        let mut shared: BTreeMap<VertexId, T> = q.iter().map(|(v, x)| (par.rotate(*v), *x)).collect();
        sweep_to_fixpoint(par, &rotated, pass + 1, &mut shared, &mut log, &mut fallback_rot)?;
        for (v, value) in shared {
            let w = par.rotate(v);
            if let std::collections::btree_map::Entry::Vacant(e) = q.entry(w) {
                e.insert(value);
                rotation_filled.push(w);
            }
        }
        pass += 2;
        if q.len() > before {
            continue;
        }
        let best = fallback
            .iter()
            .map(|(v, c)| (*v, *c))
            .chain(fallback_rot.iter().map(|(v, c)| (par.rotate(*v), *c)))
            .filter(|(v, c)| !q.contains_key(v) && c.0 > FALLBACK_FLOOR)
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0));
        let Some((v, (magnitude, value))) = best else { break };
        q.insert(v, value);
        log.push(LineLog {
            pass,
            line: "fallback".into(),
            sigma_min: f64::NAN,
            recovered: vec![Harvest { vertex: v, q: value.to_f64(), central_value: magnitude, on_line: false }],
        });
    }
    let unresolved = par.region().interior().iter().filter(|v| !q.contains_key(v)).count();
    if unresolved > 0 {
        return Err(Error::Stalled { line: "rotated pass".into(), unresolved });
    }
    rotation_filled.sort();
    Ok(Reconstruction { lambda: dn.lambda, q, rotation_filled, rotation_discrepancy, log })
}

/// Smallest singular value and condition number of `Λ((∂Ω)_L; (∂Ω)_R)`.
pub fn left_right_block<T: Real>(par: &HexParallelogram, dn: &DnMap<T>) -> Result<(f64, f64)> {
    let rows = par.boundary_indices(par.left())?;
    let cols = par.boundary_indices(par.right())?;
    Ok(dn.block_conditioning(&rows, &cols))
}

/// The potential-recovery formula at a central vertex on a probe line.
pub fn q_from_central(u_central: f64, neighbor_sum: f64, degree: usize) -> f64 {
    neighbor_sum / (degree as f64 * u_central) - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvp::dn_map;

    #[test]
    fn zero_potential_probe_vanishes_below_its_line() {
        let par = HexParallelogram::new(3).unwrap();
        let pot = Potential::from_q(&par.region().interior().iter().map(|&v| (v, 0.0)).collect(), 0.3);
        for k in 0..=3 {
            let sol = probe_solution::<f64>(&par, ProbeSource::Forward { potential: &pot, lambda: 0.3 }, LineFamily::A, k)
                .unwrap();
            for (&v, &x) in &sol.values {
                if in_zero_region(&par, LineFamily::A, k, v) {
                    assert!(x.abs() < 1e-10, "{v} {x}");
                }
                if on_line(&par, LineFamily::A, k, v) && par.region().is_interior(v) {
                    assert!((x.abs() - 1.0).abs() < 1e-10, "{v} {x}");
                }
            }
        }
    }

    #[test]
    fn q_formula() {
        // Four-point relation with u(z) = −1 and periphery summing to 3(1 + Q)(−1).
        assert!((q_from_central(-1.0, -3.0 * 1.25, 3) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_q_reconstructs_to_zero() {
        let par = HexParallelogram::new(2).unwrap();
        let pot = Potential::from_q(&par.region().interior().iter().map(|&v| (v, 0.0)).collect(), 0.3);
        let dn = dn_map::<f64>(par.region(), &pot, 0.3, Convention::Modified).unwrap();
        let rec = reconstruct_potential(&par, &dn).unwrap();
        assert!(rec.q.values().all(|q| q.abs() < 1e-9));
    }
}

//! File formats: JSON for structured objects, CSV for matrices and sample dumps.
//!
//! Matrices are written with the boundary vertex ids as the header row, in the deterministic
//! vertex order of the region. Double-double entries are written as `hi+lo` decimal sums so that
//! a dump read back reproduces the stored value exactly.

use crate::bvp::{Convention, DnMap, Potential};
use crate::error::{Error, Result};
use crate::lattice::{GraphFile, LatticeGraph, LatticeKind, VertexId};
use crate::precision::{Dense, DoubleDouble, Real};
use crate::region::{close_region, Region};
use crate::scattering::{GreenKernel, GreenKey, GreenOptions};
use crate::spectral::FermiSample;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

/// Scalars that can be written to and read from a CSV cell without loss.
pub trait CsvScalar: Real {
    fn to_cell(self) -> String;
}

impl CsvScalar for f64 {
    fn to_cell(self) -> String {
        format!("{self:e}")
    }
}

impl CsvScalar for DoubleDouble {
    fn to_cell(self) -> String {
        if self.lo() == 0.0 {
            format!("{:e}", self.hi())
        } else {
            format!("{:e}{:+e}", self.hi(), self.lo())
        }
    }
}

/// Parse `x` or `hi±lo` into a double-double.
pub fn parse_cell(cell: &str) -> Result<DoubleDouble> {
    let cell = cell.trim();
    let bad = || Error::Format(format!("cannot parse matrix entry '{cell}'"));
    let bytes = cell.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    match split {
        None => cell.parse::<f64>().map(|x| DoubleDouble::new(x, 0.0)).map_err(|_| bad()),
        Some(i) => {
            let hi: f64 = cell[..i].parse().map_err(|_| bad())?;
            let lo: f64 = cell[i..].parse().map_err(|_| bad())?;
            Ok(DoubleDouble::from_f64(hi) + DoubleDouble::from_f64(lo))
        }
    }
}

pub fn parse_vertex(text: &str) -> Result<VertexId> {
    let parts: Vec<&str> = text.trim().trim_start_matches('[').trim_end_matches(']').split(',').collect();
    let bad = || Error::Format(format!("cannot parse vertex id '{text}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let sub: u8 = parts[0].trim().parse().map_err(|_| bad())?;
    let n1: i32 = parts[1].trim().parse().map_err(|_| bad())?;
    let n2: i32 = parts[2].trim().parse().map_err(|_| bad())?;
    if sub == 0 {
        return Err(bad());
    }
    Ok(VertexId::new(sub, n1, n2))
}

/// Square matrix with a header of vertex ids labelling both rows and columns.
pub fn write_matrix_csv<T: CsvScalar>(out: impl Write, labels: &[VertexId], matrix: &Dense<T>) -> Result<()> {
    if matrix.rows != labels.len() || matrix.cols != labels.len() {
        return Err(Error::Format("matrix size differs from its label count".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(labels.iter().map(|v| v.to_string()))?;
    for i in 0..matrix.rows {
        w.write_record((0..matrix.cols).map(|j| matrix[(i, j)].to_cell()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(input: impl Read) -> Result<(Vec<VertexId>, Dense<DoubleDouble>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let labels = r.headers()?.iter().map(parse_vertex).collect::<Result<Vec<_>>>()?;
    let n = labels.len();
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for record in r.records() {
        let record = record?;
        if record.len() != n {
            return Err(Error::Format(format!("row {} has {} entries, expected {n}", rows + 1, record.len())));
        }
        for cell in record.iter() {
            data.push(parse_cell(cell)?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Format(format!("matrix has {rows} rows and {n} columns")));
    }
    Ok((labels, Dense { rows: n, cols: n, data }))
}

pub fn write_dn_csv<T: CsvScalar>(out: impl Write, dn: &DnMap<T>) -> Result<()> {
    write_matrix_csv(out, &dn.boundary, &dn.matrix)
}

pub fn read_dn_csv(input: impl Read, lambda: f64, convention: Convention) -> Result<DnMap<DoubleDouble>> {
    let (boundary, matrix) = read_matrix_csv(input)?;
    Ok(DnMap { lambda, boundary, convention, matrix })
}

/// `x1,x2,weight,curvature` for every traced point of every component of every sheet.
pub fn write_fermi_csv(out: impl Write, samples: &[FermiSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sheet", "component", "x1", "x2", "weight", "curvature"])?;
    for sample in samples {
        for (c, comp) in sample.components.iter().enumerate() {
            for k in 0..comp.points.len() {
                let p = comp.points[k];
                w.write_record([
                    sample.sheet.to_string(),
                    c.to_string(),
                    format!("{:e}", p[0]),
                    format!("{:e}", p[1]),
                    format!("{:e}", comp.weights[k]),
                    format!("{:e}", comp.curvature[k]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialEntry {
    pub vertex: VertexId,
    pub value: f64,
}

/// A potential as a list of `{vertex: [j, n1, n2], value}` records.
pub fn potential_to_json(potential: &Potential) -> Result<String> {
    let list: Vec<PotentialEntry> =
        potential.values.iter().map(|(v, x)| PotentialEntry { vertex: *v, value: *x }).collect();
    Ok(serde_json::to_string_pretty(&list)?)
}

pub fn potential_from_json(text: &str) -> Result<Potential> {
    let list: Vec<PotentialEntry> = serde_json::from_str(text)?;
    let mut values = BTreeMap::new();
    for e in list {
        if !e.value.is_finite() {
            return Err(Error::Format(format!("potential value at {} is not finite", e.vertex)));
        }
        if values.insert(e.vertex, e.value).is_some() {
            return Err(Error::Format(format!("vertex {} listed twice", e.vertex)));
        }
    }
    Ok(Potential::new(values))
}

/// A region `Ω` inside a graph; its boundary is derived, never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionFile {
    pub graph: GraphFile,
    pub interior: Vec<VertexId>,
}

impl RegionFile {
    pub fn load(&self) -> Result<(LatticeGraph, Region)> {
        let graph = LatticeGraph::from_file(&self.graph)?;
        let omega: BTreeSet<VertexId> = self.interior.iter().copied().collect();
        let region = close_region(&graph, &omega)?;
        Ok((graph, region))
    }
}

/// Serialized Green's-function values, valid for one `(lattice, λ, tolerance)` key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenCache {
    pub kind: LatticeKind,
    pub lambda: f64,
    pub tolerance: f64,
    pub ladder: Vec<f64>,
    pub residual: f64,
    /// Observed convergence order in `ε`; absent for an empty kernel.
    pub order: Option<f64>,
    /// `(sub_a, sub_b, n_a − n_b, re, im)`.
    pub entries: Vec<(u8, u8, [i32; 2], f64, f64)>,
}

impl GreenCache {
    pub fn of(kernel: &GreenKernel) -> Self {
        GreenCache {
            kind: kernel.kind,
            lambda: kernel.lambda,
            tolerance: kernel.options.tolerance,
            ladder: kernel.ladder.clone(),
            residual: kernel.residual,
            order: kernel.order.is_finite().then_some(kernel.order),
            entries: kernel.entries().iter().map(|(&(i, j, d), g)| (i, j, d, g.re, g.im)).collect(),
        }
    }

    pub fn matches(&self, kind: LatticeKind, lambda: f64, options: &GreenOptions) -> bool {
        self.kind == kind && self.lambda == lambda && self.tolerance == options.tolerance
    }

    /// A kernel seeded with the cached values; missing keys are computed on demand.
    pub fn restore(&self, options: GreenOptions) -> Result<GreenKernel> {
        if self.tolerance != options.tolerance {
            return Err(Error::Format(format!("cache tolerance {} differs from {}", self.tolerance, options.tolerance)));
        }
        let mut kernel = GreenKernel::new(self.kind, self.lambda, options)?;
        if kernel.ladder != self.ladder {
            return Err(Error::Format("cache was built on a different extrapolation ladder".into()));
        }
        let entries = self.entries.iter().map(|&(i, j, d, re, im)| -> (GreenKey, Complex64) { ((i, j, d), Complex64::new(re, im)) });
        kernel.seed(entries, self.residual, self.order.unwrap_or(f64::INFINITY));
        Ok(kernel)
    }

    pub fn file_name(kind: LatticeKind, lambda: f64, tolerance: f64) -> String {
        format!("green-{kind:?}-{lambda}-{tolerance:e}.json").to_lowercase()
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_round_trip_double_double() {
        let x = DoubleDouble::from_f64(1.0) / DoubleDouble::from_f64(3.0);
        let back = parse_cell(&x.to_cell()).unwrap();
        assert_eq!(back, x);
        let y = DoubleDouble::from_f64(-2.5e-7) / DoubleDouble::from_f64(7.0);
        assert_eq!(parse_cell(&y.to_cell()).unwrap(), y);
        assert_eq!(parse_cell("1e-3").unwrap().hi(), 1e-3);
        assert!(parse_cell("abc").is_err());
    }

    #[test]
    fn vertex_ids_parse_their_display() {
        let v = VertexId::new(2, -3, 4);
        assert_eq!(parse_vertex(&v.to_string()).unwrap(), v);
        assert!(parse_vertex("[0,1,1]").is_err());
        assert!(parse_vertex("1,2").is_err());
    }

    #[test]
    fn potential_file_is_a_record_list() {
        let p = Potential::new([(VertexId::new(1, 0, 1), 0.25)].into_iter().collect());
        let text = potential_to_json(&p).unwrap();
        assert!(text.contains("\"vertex\""));
        assert_eq!(potential_from_json(&text).unwrap(), p);
        assert!(potential_from_json(r#"[{"vertex":[1,0,0],"value":1},{"vertex":[1,0,0],"value":2}]"#).is_err());
    }

    #[test]
    fn matrix_csv_rejects_ragged_rows() {
        let text = "\"[1,0,0]\",\"[2,0,0]\"\n1,2\n3\n";
        assert!(read_matrix_csv(text.as_bytes()).is_err());
    }
}

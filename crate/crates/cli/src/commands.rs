use crate::{
    selftest, BvpAction, CheckFailed, Command, ExperimentConfig, LatticeArgs, NetworkAction, ProbeArgs, ReconstructArgs,
    SmatrixArgs, SpectralAction,
};
use anyhow::{bail, Context, Result};
use lattice_inverse::bvp::{assemble, Convention, Potential, REGULARITY_THRESHOLD};
use lattice_inverse::defect::{build_defect_region, HalfSpace, ProbeDirection, EQUALITY_TOLERANCE};
use lattice_inverse::io::{
    potential_from_json, potential_to_json, read_dn_csv, read_json, write_dn_csv, write_fermi_csv, CsvScalar,
    GreenCache, RegionFile,
};
use lattice_inverse::network::{dn_map_res, is_critical, is_critical_in, reduce, Criticality, RemovalMode};
use lattice_inverse::scattering::{layer_operators, scattering_amplitude, verify_bridge_identity, FermiGrid};
use lattice_inverse::spectral::{check_convexity, convex_windows, fermi_sample, STRICT_CURVATURE};
use lattice_inverse::{
    build_lattice, convex_hull_of_defect, reconstruct_potential, CellWindow, ConductanceNetwork, ConvexPolygonDefect,
    DoubleDouble, Error, GreenKernel, GreenOptions, HexHull, HexParallelogram, Interface, LatticeKind, PeriodicLattice,
    VertexId,
};
use serde::Serialize;
use serde_json::{json, Value};
use std::fs::File;
use std::io::Write;
use std::path::Path;

/// Largest `|p(x, λ)|` accepted on a traced Fermi curve.
const FERMI_RESIDUAL: f64 = 1e-9;
/// Relative asymmetry accepted in a degree-weighted D-N map.
const SYMMETRY_TOLERANCE: f64 = 1e-9;

pub fn run(config: &ExperimentConfig) -> Result<()> {
    let command = config.command.as_ref().expect("checked by caller");
    match command {
        Command::Lattice(a) => lattice(a),
        Command::Spectral { action } => spectral(command, action),
        Command::Bvp { action } => bvp(command, action),
        Command::Reconstruct(a) => reconstruct(command, a),
        Command::Network { action } => network(command, action),
        Command::Probe(a) => probe(command, a),
        Command::Smatrix(a) => smatrix(command, a),
        Command::Selftest(a) => selftest::run(a),
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn create(path: &Path) -> Result<File> {
    Ok(File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
}

fn open(path: &Path) -> Result<File> {
    Ok(File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
}

fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
}

/// Write `{command, ...body}` as pretty JSON; the body carries every tolerance it was judged on.
fn report(path: Option<&Path>, command: &Command, body: Value) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let mut object = json!({ "command": command });
    if let (Some(map), Value::Object(body)) = (object.as_object_mut(), body) {
        map.extend(body);
    }
    emit(Some(path), &(serde_json::to_string_pretty(&object)? + "\n"))
}

fn periodic(name: &str) -> Result<PeriodicLattice> {
    Ok(name.parse::<PeriodicLattice>()?)
}

fn lattice_kind(name: &str) -> Result<LatticeKind> {
    periodic(name)?
        .lattice_kind()
        .ok_or_else(|| Error::UnsupportedKind(format!("no graph generator for '{name}'")).into())
}

fn lattice(a: &LatticeArgs) -> Result<()> {
    let kind = lattice_kind(&a.kind)?;
    let text = if let Some(n) = a.parallelogram {
        if kind != LatticeKind::Hexagonal {
            return Err(Error::UnsupportedKind("parallelograms live on the hexagonal lattice".into()).into());
        }
        let par = HexParallelogram::new(n)?;
        let file = RegionFile { graph: par.graph().to_file(), interior: par.region().interior().to_vec() };
        serde_json::to_string_pretty(&file)?
    } else if let Some(b) = a.block {
        let graph = build_lattice(kind, CellWindow::centered(a.radius))?;
        let interior: Vec<VertexId> = graph.vertices().filter(|v| v.n1.abs() <= b && v.n2.abs() <= b).collect();
        let file = RegionFile { graph: graph.to_file(), interior };
        file.load().context("region does not fit the window")?;
        serde_json::to_string_pretty(&file)?
    } else {
        serde_json::to_string_pretty(&build_lattice(kind, CellWindow::centered(a.radius))?.to_file())?
    };
    emit(a.out.as_deref(), &(text + "\n"))
}

fn spectral(command: &Command, action: &SpectralAction) -> Result<()> {
    match action {
        SpectralAction::Fermi { lattice, lambda, n, out, report: path } => {
            let lat = periodic(lattice)?;
            let mut samples = Vec::new();
            for (i, sheet) in lat.all_sheets(*lambda).iter().enumerate() {
                let (lo, hi) = sheet.base.range();
                if sheet.level > lo && sheet.level < hi {
                    samples.push(fermi_sample(lat, *lambda, i + 1, *n).with_context(|| format!("tracing sheet {}", i + 1))?);
                }
            }
            if samples.is_empty() {
                return Err(Error::EmptyLevelSet(*lambda).into());
            }
            match out {
                Some(p) => write_fermi_csv(create(p)?, &samples)?,
                None => write_fermi_csv(std::io::stdout(), &samples)?,
            }
            let sheets: Vec<Value> = samples
                .iter()
                .map(|s| {
                    json!({
                        "sheet": s.sheet,
                        "level": s.level,
                        "components": s.components.len(),
                        "turning": s.components.iter().map(|c| c.turning).collect::<Vec<_>>(),
                        "winding": s.components.iter().map(|c| c.winding).collect::<Vec<_>>(),
                        "residual": s.residual(),
                    })
                })
                .collect();
            let worst = samples.iter().map(|s| s.residual()).fold(0.0, f64::max);
            report(path.as_deref(), command, json!({ "sheets": sheets, "tolerances": { "residual": FERMI_RESIDUAL } }))?;
            if worst > FERMI_RESIDUAL {
                bail!(CheckFailed(format!("traced points miss the level set by {worst:e}")));
            }
            Ok(())
        }
        SpectralAction::Windows { lattice, samples, n, report: path } => {
            let lat = periodic(lattice)?;
            let table = convex_windows(lat);
            let mut checks = Vec::new();
            let mut failures = 0;
            for (w, window) in table.windows.iter().enumerate() {
                for lambda in window.sample_energies(*samples) {
                    let check = check_convexity(lat, lambda, *n);
                    println!(
                        "window {w} [{:.4}, {:.4}] λ = {lambda:.4}: {} (min relative curvature {:.3e})",
                        window.lo,
                        window.hi,
                        if check.convex { "convex" } else { "NOT convex" },
                        check.min_relative_curvature
                    );
                    failures += usize::from(!check.convex);
                    checks.push(check);
                }
            }
            report(
                path.as_deref(),
                command,
                json!({ "table": table, "checks": checks, "tolerances": { "strict_curvature": STRICT_CURVATURE } }),
            )?;
            if failures > 0 {
                bail!(CheckFailed(format!("{failures} sampled energies are not convex")));
            }
            Ok(())
        }
    }
}

fn convention(name: &str) -> Result<Convention> {
    match name.to_ascii_lowercase().as_str() {
        "standard" => Ok(Convention::Standard),
        "modified" => Ok(Convention::Modified),
        other => Err(Error::Format(format!("unknown convention '{other}'")).into()),
    }
}

fn load_potential(path: Option<&Path>) -> Result<Potential> {
    match path {
        Some(p) => Ok(potential_from_json(&read_text(p)?).with_context(|| format!("reading {}", p.display()))?),
        None => Ok(Potential::zero()),
    }
}

fn dnmap_in<T: CsvScalar>(
    region: &lattice_inverse::Region,
    potential: &Potential,
    lambda: f64,
    convention: Convention,
    out: Option<&Path>,
) -> Result<Value> {
    let system = assemble::<T>(region, potential, lambda, convention).context("assembling the Dirichlet problem")?;
    let dn = system.dn_map().context("computing the D-N map")?;
    match out {
        Some(p) => write_dn_csv(create(p)?, &dn)?,
        None => write_dn_csv(std::io::stdout(), &dn)?,
    }
    let weights: Vec<f64> = region.boundary().iter().map(|&b| region.degree(b).map(|d| d as f64)).collect::<Result<_, _>>()?;
    let scale = dn.matrix.max_abs().max(1.0);
    Ok(json!({
        "interior": region.interior().len(),
        "boundary": region.boundary().len(),
        "relative_sigma_min": system.relative_sigma_min(),
        "symmetry_defect": dn.symmetry_defect(&weights) / scale,
        "tolerances": { "regularity": REGULARITY_THRESHOLD, "symmetry": SYMMETRY_TOLERANCE },
    }))
}

fn bvp(command: &Command, action: &BvpAction) -> Result<()> {
    let BvpAction::Dnmap { region, potential, lambda, convention: conv, precision, out, report: path } = action;
    let file: RegionFile = read_json(region)?;
    let (_, region) = file.load().context("loading the region")?;
    let potential = load_potential(potential.as_deref())?;
    let conv = convention(conv)?;
    let body = match precision.as_str() {
        "double" => dnmap_in::<f64>(&region, &potential, *lambda, conv, out.as_deref())?,
        "double-double" => dnmap_in::<DoubleDouble>(&region, &potential, *lambda, conv, out.as_deref())?,
        other => return Err(Error::Format(format!("unknown precision '{other}'")).into()),
    };
    report(path.as_deref(), command, body)
}

fn reconstruct(command: &Command, a: &ReconstructArgs) -> Result<()> {
    let dn = read_dn_csv(open(&a.dnmap)?, a.lambda, Convention::Modified).context("reading the D-N map")?;
    let par = HexParallelogram::new(a.size)?;
    let rec = reconstruct_potential(&par, &dn).context("reconstruction")?;
    if !a.quiet {
        for line in &rec.log {
            let values: Vec<String> = line.recovered.iter().map(|h| format!("{}={:.12}", h.vertex, h.q)).collect();
            eprintln!("pass {} {:<9} σ_min {:.3e}  {}", line.pass, line.line, line.sigma_min, values.join(" "));
        }
    }
    let potential = rec.potential();
    emit(a.out.as_deref(), &(potential_to_json(&potential)? + "\n"))?;
    let error = match &a.truth {
        Some(p) => {
            let truth = load_potential(Some(p))?;
            let vertices = par.region().interior();
            Some(vertices.iter().map(|&v| (potential.get(v) - truth.get(v)).abs()).fold(0.0, f64::max))
        }
        None => None,
    };
    report(
        a.report.as_deref(),
        command,
        json!({
            "lambda": rec.lambda,
            "size": a.size,
            "recovered": rec.q.len(),
            "rotation_filled": rec.rotation_filled,
            "rotation_discrepancy": rec.rotation_discrepancy,
            "error": error,
            "log": rec.log,
            "tolerances": { "error": a.tolerance },
        }),
    )?;
    if let Some(e) = error {
        eprintln!("largest error against the supplied potential: {e:e}");
        if e > a.tolerance {
            bail!(CheckFailed(format!("reconstruction error {e:e} exceeds {:e}", a.tolerance)));
        }
    }
    Ok(())
}

fn load_network(path: &Path) -> Result<ConductanceNetwork> {
    Ok(ConductanceNetwork::from_json(&read_text(path)?).with_context(|| format!("reading {}", path.display()))?)
}

fn network(command: &Command, action: &NetworkAction) -> Result<()> {
    match action {
        NetworkAction::Reduce { input, check_dn, k_max, budget, tolerance, out, report: path } => {
            let net = load_network(input)?;
            let red = reduce(&net, *k_max, *budget);
            emit(out.as_deref(), &(red.network.to_json()? + "\n"))?;
            let difference = if *check_dn {
                let before = dn_map_res(&net).context("D-N map before reduction")?;
                let after = dn_map_res(&red.network).context("D-N map after reduction")?;
                Some(before.relative_difference(&after)?)
            } else {
                None
            };
            eprintln!(
                "{} steps: {} vertices, {} edges -> {} vertices, {} edges{}",
                red.steps.len(),
                net.vertex_count(),
                net.edge_count(),
                red.network.vertex_count(),
                red.network.edge_count(),
                difference.map(|d| format!("; D-N change {d:e}")).unwrap_or_default()
            );
            report(
                path.as_deref(),
                command,
                json!({
                    "steps": red.steps,
                    "history": red.history,
                    "critical": red.critical,
                    "completed": red.completed,
                    "dn_difference": difference,
                    "tolerances": { "dn_difference": tolerance },
                }),
            )?;
            if difference.is_some_and(|d| d > *tolerance) {
                bail!(CheckFailed(format!("reduction changed the D-N map by {:e}", difference.unwrap_or(0.0))));
            }
            if !red.completed {
                return Err(Error::Budget(*budget).into());
            }
            Ok(())
        }
        NetworkAction::Critical { input, k_max, budget, delete_only, report: path } => {
            let net = load_network(input)?;
            let verdict = if *delete_only {
                is_critical_in(&net, *k_max, *budget, &[RemovalMode::Delete])
            } else {
                is_critical(&net, *k_max, *budget)
            };
            match &verdict {
                Criticality::Critical(certs) => println!("critical ({} certificates)", certs.len()),
                Criticality::NotCritical { edge, mode, reason } => println!("not critical: {mode:?} edge {edge}: {reason}"),
                Criticality::Unknown { edge, mode, evaluated } => {
                    println!("unknown: budget spent at {mode:?} edge {edge} after {evaluated} evaluations")
                }
            }
            report(path.as_deref(), command, json!({ "verdict": verdict, "k_max": k_max, "budget": budget }))?;
            if verdict.is_critical().is_none() {
                return Err(Error::Budget(*budget).into());
            }
            Ok(())
        }
        NetworkAction::Dn { input, out } => {
            let dn = dn_map_res(&load_network(input)?)?;
            let mut buffer = Vec::new();
            {
                let mut w = csv::Writer::from_writer(&mut buffer);
                w.write_record(dn.boundary.iter().map(|v| v.to_string()))?;
                for row in dn.matrix.row_iter() {
                    w.write_record(row.iter().map(|x| format!("{x:e}")))?;
                }
                w.flush()?;
            }
            emit(out.as_deref(), std::str::from_utf8(&buffer)?)
        }
    }
}

/// Hull file: the supporting half-spaces as `(i, j, k, sign)` records.
#[derive(Serialize)]
struct HullFile {
    lambda: f64,
    halfspaces: Vec<HalfSpace>,
    hull: Option<HexHull>,
    inconclusive: Vec<ProbeDirection>,
}

fn probe(command: &Command, a: &ProbeArgs) -> Result<()> {
    let par = HexParallelogram::new(a.parallelogram)?;
    let (dn_def, dn_free, lambda, expected) = if let Some(path) = &a.defect {
        let described: ConvexPolygonDefect = read_json(path)?;
        let defect = ConvexPolygonDefect::new(described.components).context("defect description")?;
        let regions = build_defect_region(&par, &defect).context("placing the defect")?;
        let lambda = regions.select_energy(&a.lambda).context("choosing an admissible energy")?;
        let (def, free) = regions.dn_maps::<f64>(lambda).context("D-N maps")?;
        if let Some(dir) = &a.write_dn {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
            write_dn_csv(create(&dir.join("dn_def.csv"))?, &def)?;
            write_dn_csv(create(&dir.join("dn_free.csv"))?, &free)?;
        }
        (def, free, lambda, Some(defect.hull()))
    } else {
        let (Some(def), Some(free)) = (&a.dn_def, &a.dn_free) else {
            return Err(Error::Format("give --defect or both --dn-def and --dn-free".into()).into());
        };
        let [lambda] = a.lambda[..] else {
            return Err(Error::Format("D-N maps are read at a single --lambda".into()).into());
        };
        let def = read_dn_csv(open(def)?, lambda, Convention::Modified).context("reading --dn-def")?.to_f64();
        let free = read_dn_csv(open(free)?, lambda, Convention::Modified).context("reading --dn-free")?.to_f64();
        (def, free, lambda, None)
    };
    let hull = convex_hull_of_defect(&par, &dn_def, &dn_free, lambda).context("probing")?;
    for r in &hull.reports {
        eprintln!(
            "{}: m = {}  margin {}",
            r.direction,
            r.m.map(|m| m.to_string()).unwrap_or("-".into()),
            r.margin.map(|x| format!("{x:.3e}")).unwrap_or("-".into())
        );
    }
    let file = HullFile {
        lambda,
        halfspaces: hull.halfspaces.clone(),
        hull: hull.hull,
        inconclusive: hull.inconclusive.clone(),
    };
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&file)? + "\n"))?;
    let smallest = hull.reports.iter().filter_map(|r| r.margin).fold(f64::INFINITY, f64::min);
    report(
        a.report.as_deref(),
        command,
        json!({
            "lambda": lambda,
            "reports": hull.reports,
            "smallest_margin": smallest.is_finite().then_some(smallest),
            "expected_hull": expected,
            "tolerances": { "equality": EQUALITY_TOLERANCE },
        }),
    )?;
    if let Some(expected) = expected {
        if hull.hull != expected {
            bail!(CheckFailed(format!("probed hull {:?} differs from the defect's hull {expected:?}", hull.hull)));
        }
    }
    Ok(())
}

fn smatrix(command: &Command, a: &SmatrixArgs) -> Result<()> {
    let kind = lattice_kind(&a.lattice)?;
    let potential = load_potential(Some(&a.potential))?;
    let iface = Interface::new(kind, potential.values.keys().copied().collect()).context("interface")?;
    let options = GreenOptions::default();
    let cache_path = a.cache_dir.as_ref().map(|d| d.join(GreenCache::file_name(kind, a.lambda, options.tolerance)));
    let mut green = match &cache_path {
        Some(p) if p.exists() => {
            let cache: GreenCache = read_json(p)?;
            if !cache.matches(kind, a.lambda, &options) {
                return Err(Error::Format(format!("{} belongs to another lattice or energy", p.display())).into());
            }
            cache.restore(options.clone())?
        }
        _ => GreenKernel::new(kind, a.lambda, options.clone()).context("Green's function")?,
    };
    let grid = FermiGrid::new(kind, a.lambda, a.fermi_n).context("Fermi grid")?;
    let bridge = verify_bridge_identity(&mut green, &iface, &potential, &grid)?;
    let amplitude = scattering_amplitude(&mut green, &potential, &grid)?;
    let layers = layer_operators(&mut green, &iface, &potential)?.report(&iface, green.residual)?;
    if let Some(p) = &cache_path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        }
        lattice_inverse::io::write_json(p, &GreenCache::of(&green))?;
    }
    let unitarity = amplitude.unitarity_defect();
    println!(
        "λ = {}: bridge residual {:.3e}, unitarity defect {:.3e}, Green extrapolation {:.3e}",
        a.lambda, bridge.residual, unitarity, green.residual
    );
    report(
        a.report.as_deref(),
        command,
        json!({
            "lattice": kind,
            "lambda": a.lambda,
            "sigma": iface.sigma,
            "bridge": bridge,
            "layers": layers,
            "unitarity_defect": unitarity,
            "reciprocity_defect": amplitude.reciprocity_defect(),
            "green_order": green.order.is_finite().then_some(green.order),
            "tolerances": { "bridge_residual": a.tolerance, "green_extrapolation": options.tolerance },
        }),
    )?;
    if bridge.residual > a.tolerance {
        bail!(CheckFailed(format!("bridge residual {:e} exceeds {:e}", bridge.residual, a.tolerance)));
    }
    Ok(())
}

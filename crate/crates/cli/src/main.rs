//! `latinv`: command-line front end for the lattice inverse-problem library.

mod commands;
mod selftest;

use anyhow::Result;
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit statuses, one per failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const INPUT: u8 = 3;
    pub const ADMISSIBILITY: u8 = 4;
    pub const BUDGET: u8 = 5;
    pub const CHECK_FAILED: u8 = 6;
}

#[derive(Parser, Debug)]
#[command(name = "latinv", version, about = "Inverse problems on perturbed periodic lattices")]
struct Cli {
    /// Read the command and its options from a JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads for parallel kernels; 1 makes every output bit-stable.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

/// A run, reproducible from this value and its input files.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a lattice window or a region inside one.
    Lattice(LatticeArgs),
    /// Fermi curves and convexity windows.
    Spectral {
        #[command(subcommand)]
        action: SpectralAction,
    },
    /// Boundary value problems on a finite region.
    Bvp {
        #[command(subcommand)]
        action: BvpAction,
    },
    /// Recover the potential on a hexagonal parallelogram from its D-N map.
    Reconstruct(ReconstructArgs),
    /// Resistor-network reduction and criticality.
    Network {
        #[command(subcommand)]
        action: NetworkAction,
    },
    /// Hexagonal convex hull of a defect from two D-N maps.
    Probe(ProbeArgs),
    /// Scattering amplitude of a potential and the bridge identity to boundary data.
    Smatrix(SmatrixArgs),
    /// Run the acceptance suite.
    Selftest(SelftestArgs),
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct LatticeArgs {
    /// square, triangular (tri) or hexagonal (hex).
    #[arg(long, default_value = "hex")]
    pub kind: String,
    /// Cell window `[-r, r]²`.
    #[arg(long, default_value_t = 4)]
    pub radius: i32,
    /// Emit the hexagonal parallelogram of this size as a region.
    #[arg(long, conflicts_with = "block")]
    pub parallelogram: Option<usize>,
    /// Emit the region of all vertices in cells with `|n1|, |n2| <= block`.
    #[arg(long)]
    pub block: Option<i32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralAction {
    /// Trace every sheet of the Fermi curve and dump `x1,x2,weight,curvature`.
    Fermi {
        #[arg(long, default_value = "hex")]
        lattice: String,
        #[arg(long)]
        lambda: f64,
        /// Samples per closed component.
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Convexity windows with their certified margins.
    Windows {
        #[arg(long, default_value = "hex")]
        lattice: String,
        /// Energies checked inside each window.
        #[arg(long, default_value_t = 5)]
        samples: usize,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BvpAction {
    /// Assemble and dump the D-N map of a region.
    Dnmap {
        #[arg(long)]
        region: PathBuf,
        /// Potential file; zero when omitted.
        #[arg(long)]
        potential: Option<PathBuf>,
        #[arg(long)]
        lambda: f64,
        /// `standard` or `modified`.
        #[arg(long, default_value = "modified")]
        convention: String,
        /// `double` or `double-double`.
        #[arg(long, default_value = "double-double")]
        precision: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructArgs {
    /// Modified-convention D-N map of the parallelogram, as CSV.
    #[arg(long)]
    pub dnmap: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    /// Size of the parallelogram.
    #[arg(long = "N", alias = "n")]
    pub size: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Known potential to compare against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Maximum error against `--truth` before the run counts as failed.
    #[arg(long, default_value_t = 1e-7)]
    pub tolerance: f64,
    /// Suppress the per-line progress log.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Subcommand, Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkAction {
    /// Reduce by elementary transformations, optionally checking that the D-N map is kept.
    Reduce {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        check_dn: bool,
        #[arg(long, default_value_t = 3)]
        k_max: usize,
        #[arg(long, default_value_t = 20_000)]
        budget: usize,
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Decide criticality over connections of size at most `k_max`.
    Critical {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        k_max: usize,
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
        /// Only test edge deletions, not contractions.
        #[arg(long)]
        delete_only: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Dump the response matrix as CSV.
    Dn {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ProbeArgs {
    /// Size of the parallelogram.
    #[arg(long)]
    pub parallelogram: usize,
    #[arg(long, requires = "dn_free", conflicts_with = "defect")]
    pub dn_def: Option<PathBuf>,
    #[arg(long, requires = "dn_def")]
    pub dn_free: Option<PathBuf>,
    /// Build both maps from a defect description instead of reading them.
    #[arg(long)]
    pub defect: Option<PathBuf>,
    /// Energy, or with `--defect` a comma-separated retry list.
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.45,0.6,-0.35")]
    pub lambda: Vec<f64>,
    /// With `--defect`, also write `dn_def.csv` and `dn_free.csv` here.
    #[arg(long)]
    pub write_dn: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SmatrixArgs {
    #[arg(long, default_value = "hex")]
    pub lattice: String,
    #[arg(long)]
    pub potential: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    /// Fermi-curve samples per component.
    #[arg(long, default_value_t = 128)]
    pub fermi_n: usize,
    /// Bridge-identity residual above which the run fails.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory holding Green's-function caches.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SelftestArgs {
    /// Criterion numbers to run; all when empty.
    pub criteria: Vec<u8>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// A computed check that did not meet its tolerance.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_status(err: &anyhow::Error) -> u8 {
    use lattice_inverse::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<CheckFailed>().is_some() {
            return exit::CHECK_FAILED;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_) | E::Format(_) | E::UnsupportedKind(_) => exit::INPUT,
                E::Budget(_) => exit::BUDGET,
                _ => exit::ADMISSIBILITY,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return exit::INPUT;
        }
    }
    exit::INTERNAL
}

fn usage() -> ExitCode {
    let _ = Cli::command().print_help();
    ExitCode::from(exit::USAGE)
}

fn load_config(cli: Cli) -> Result<ExperimentConfig> {
    match cli.config {
        Some(_) if cli.command.is_some() => {
            Err(lattice_inverse::Error::Format("give either --config or a subcommand, not both".into()).into())
        }
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| lattice_inverse::Error::Io(format!("{}: {e}", path.display())))?;
            let mut config: ExperimentConfig = if text.trim().is_empty() {
                ExperimentConfig::default()
            } else {
                serde_json::from_str(&text).map_err(|e| lattice_inverse::Error::Format(format!("{}: {e}", path.display())))?
            };
            config.threads = cli.threads.or(config.threads);
            Ok(config)
        }
        None => Ok(ExperimentConfig { command: cli.command, threads: cli.threads }),
    }
}


fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load_config(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_status(&e));
        }
    };
    if config.command.is_none() {
        return usage();
    }
    if let Some(n) = config.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(exit::INTERNAL);
        }
    }
    match commands::run(&config) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}

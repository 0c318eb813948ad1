//! Inverse problems on perturbed periodic lattices: D-N maps, potential reconstruction on
//! hexagonal parallelograms, resistor networks, defect probing and the scattering bridge.

pub mod bvp;
pub mod defect;
pub mod error;
pub mod io;
pub mod lattice;
pub mod network;
pub mod parallelogram;
pub mod precision;
pub mod reconstruction;
pub mod region;
pub mod scattering;
pub mod spectral;

pub use bvp::{Convention, DnMap, Potential};
pub use error::{Error, Result};
pub use lattice::{build_lattice, CellWindow, LatticeGraph, LatticeKind, VertexId};
pub use parallelogram::HexParallelogram;
pub use precision::{Dense, DoubleDouble, Real};
pub use region::{close_region, GridFunction, Region};
pub use network::{ConductanceNetwork, Criticality, ResistorDnMap, Transform};
pub use reconstruction::{reconstruct_potential, Reconstruction};
pub use defect::{convex_hull_of_defect, ConvexPolygon, ConvexPolygonDefect, HexHull};
pub use scattering::{GreenKernel, GreenOptions, Interface};
pub use spectral::PeriodicLattice;

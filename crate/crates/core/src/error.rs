use crate::lattice::VertexId;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported lattice kind: {0}")]
    UnsupportedKind(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("vertex {0} is not in the graph")]
    MissingVertex(VertexId),
    #[error("edge {0}-{1} is not in the graph")]
    MissingEdge(VertexId, VertexId),
    #[error("vertex set is not connected")]
    Disconnected,
    #[error("region touches the window border at {0}; enlarge the window")]
    TruncatedRegion(VertexId),
    #[error("no value supplied at {0}")]
    MissingValue(VertexId),
    #[error("{0} is not a boundary vertex of the region")]
    NotBoundary(VertexId),
    #[error("potential is nonzero at {0}, outside the interior")]
    PotentialOutsideInterior(VertexId),
    #[error("Dirichlet problem is singular (relative smallest singular value {rel_sigma_min:e})")]
    Singular { rel_sigma_min: f64 },
    #[error("sub-block {block} is singular (condition number {condition:e})")]
    SingularBlock { block: String, condition: f64 },
    #[error("{0}")]
    Geometry(String),
    #[error("energy {lambda} is within {distance:e} of the threshold {threshold}")]
    NearThreshold { lambda: f64, threshold: f64, distance: f64 },
    #[error("level set is empty at energy {0}")]
    EmptyLevelSet(f64),
    #[error("gradient of the band function vanishes near {0:?}")]
    DegenerateGradient([f64; 2]),
    #[error("network: {0}")]
    Network(String),
    #[error("transform not applicable: {0}")]
    Inapplicable(String),
    #[error("search budget of {0} exhausted")]
    Budget(usize),
    #[error("reconstruction stalled: {unresolved} vertices unresolved after line {line}")]
    Stalled { line: String, unresolved: usize },
    #[error("inconsistent reconstruction at {vertex}: {first} vs {second}")]
    Inconsistent { vertex: VertexId, first: f64, second: f64 },
    #[error("probe energy {0} is zero or a Dirichlet eigenvalue")]
    ProbeEnergy(f64),
    #[error("scattering stage '{stage}' failed: {reason}")]
    Scattering { stage: &'static str, reason: String },
    #[error("io: {0}")]
    Io(String),
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

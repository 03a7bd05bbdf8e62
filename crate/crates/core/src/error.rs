use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max |M - M^H| = {max_deviation:e}")]
    NotHermitian { max_deviation: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("objective is not finite at probe of component {index}")]
    NonFiniteObjective { index: usize },

    #[error("invalid Pauli label {0} (expected 0..=3)")]
    InvalidPauliLabel(u8),

    #[error("site {site} out of range 1..={sites}")]
    SiteOutOfRange { site: usize, sites: usize },

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("non-unitary factor annihilated the state (norm {norm:e})")]
    DegenerateAnnihilation { norm: f64 },

    #[error("dimension {dim} exceeds the exact-diagonalization cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("ansatz layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

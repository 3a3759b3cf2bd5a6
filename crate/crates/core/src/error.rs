use std::path::PathBuf;

/// Errors raised by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("not a density matrix: {0}")]
    NotDensity(String),

    #[error("eigen-solver failed to converge (residual {residual:.3e})")]
    Convergence { residual: f64 },

    #[error("matrix is numerically defective (eigenvector condition number {condition:.3e})")]
    Defective { condition: f64 },

    #[error("fixed point is not unique: {count} eigenvalues within 1e-9 of 1")]
    AmbiguousFixedPoint { count: usize },

    #[error("spectrum is degenerate (minimum gap {min_gap:.3e})")]
    DegenerateSpectrum { min_gap: f64 },

    #[error("joint system is too large: {qubits} qubits exceeds cap {cap}")]
    TooLarge { qubits: usize, cap: usize },

    #[error("iteration did not converge after {rounds} rounds (last delta {final_delta:.3e})")]
    NotConverged { rounds: usize, final_delta: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Whether the error comes from user input (configuration, arguments)
    /// rather than from a numerical failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidArgument(_) | Error::Json { .. }
        )
    }
}

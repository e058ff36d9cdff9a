use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid field specification: {0}")]
    InvalidSpec(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("exact balance impossible: {cells} cells cannot be split evenly")]
    ExactBalanceImpossible { cells: usize },

    #[error("unsupported cell law for this operation: {0}")]
    UnsupportedLaw(&'static str),

    #[error("point {0:?} lies outside the domain")]
    OutOfDomain(Vec<f64>),

    #[error("resolution r={r} does not resolve a coefficient table with {sub} sub-cells per edge")]
    UnresolvedCoefficientTable { r: usize, sub: usize },

    #[error("conjugate gradients did not converge: {iterations} iterations, relative residual {residual:.3e}")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("averaged-gradient matrix is singular in the Neumann branch")]
    SingularNeumann,

    #[error("decay check failed: outer shell ratio {ratio:.3e} exceeds threshold {threshold:.3e} for every K <= {max_shell}")]
    SlowDecay {
        ratio: f64,
        threshold: f64,
        max_shell: usize,
    },

    #[error("offline tables do not match the requested setup (expected key {expected}, found {found})")]
    TableMismatch { expected: String, found: String },

    #[error("sample with seed {seed} failed: {source}")]
    SampleFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("rejection cap of {cap} draws exhausted with {accepted} of {wanted} samples accepted")]
    RejectionCapExceeded {
        cap: u64,
        accepted: usize,
        wanted: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error (or the error wrapped by a failed sample) came from a linear solve.
    pub fn is_solver_failure(&self) -> bool {
        match self {
            Error::NonConvergence { .. } | Error::SingularNeumann => true,
            Error::SampleFailed { source, .. } => source.is_solver_failure(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

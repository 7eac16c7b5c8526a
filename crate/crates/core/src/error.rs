use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh topology error: {0}")]
    Topology(String),

    /// A nodal level-set value sits on the interface, or a perturbation changes
    /// which cells are cut.
    #[error("level-set assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("cell is not cut: all level-set values share the same sign")]
    NotCut,

    #[error("singular derivative: {0}")]
    SingularDerivative(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("integrand failed on cell {cell}: {message}")]
    Integrand { cell: usize, message: String },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("stage {stage}: {source}")]
    Stage { stage: usize, source: Box<Error> },

    #[error("partition integrity: {0}")]
    Partition(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

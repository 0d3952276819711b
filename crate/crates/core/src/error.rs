use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("vector length {0} is not a perfect square")]
    NotPerfectSquare(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is singular")]
    Singular,

    #[error("{0} must be finite")]
    NonFinite(&'static str),

    #[error("hamiltonian is not Hermitian (defect {0:e})")]
    NonHermitian(f64),

    #[error("singlet projector is not an orthogonal projector (defect {0:e})")]
    NotProjector(f64),

    #[error("rate constant {name} must be nonnegative, got {value}")]
    NegativeRate { name: &'static str, value: f64 },

    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("invalid initial density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("time grid must be sorted and nonnegative")]
    InvalidTimeGrid,

    #[error("closed-form propagator needs the two-level system with zero hamiltonian: {0}")]
    UnsupportedSystem(String),

    #[error("population {0:e} has a non-negligible imaginary part")]
    ComplexPopulation(f64),

    #[error("no samples fall inside the fit window")]
    EmptyFitWindow,

    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    #[error("invalid trajectory configuration: {0}")]
    InvalidTrajectoryConfig(String),
}

use thiserror::Error;

/// Errors raised by the simulation and numerics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("moment diverges: {0}")]
    MomentDiverges(String),

    #[error("no boundary normalization found: {0}")]
    NoBoundaryNormalization(String),

    #[error("degenerate law: {0}")]
    DegenerateLaw(String),

    #[error("law is not in the boundary case (r1 = {r1:e}, r2 = {r2:e})")]
    NotBoundary { r1: f64, r2: f64 },

    #[error("law has no exact enumeration or closed form: {0}")]
    NotEnumerable(String),

    #[error("enumeration too large: {size} exceeds budget {budget}")]
    EnumerationTooLarge { size: f64, budget: f64 },

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("non-integrable singularity: {0}")]
    NonIntegrable(String),

    #[error("quadrature did not converge: {0}")]
    QuadratureFailed(String),

    #[error("ode integration failed: {0}")]
    OdeFailed(String),

    #[error("bracket failure: {0}")]
    BracketFailure(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dp width {width} exceeds budget {budget}")]
    WidthBudget { width: usize, budget: usize },

    #[error("population overflow at generation {generation}: {size} particles exceed cap {cap}")]
    Overflow {
        generation: usize,
        size: usize,
        cap: usize,
    },

    #[error("integer overflow in population count at generation {0}")]
    CountOverflow(usize),

    #[error("regimes are not coupling-compatible: {0}")]
    IncompatibleRegimes(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("record parse error at line {line}: {msg}")]
    RecordParse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

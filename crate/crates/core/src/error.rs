use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("datum has nonzero mean {mean:e} (tolerance {tolerance:e})")]
    NonZeroMean { mean: f64, tolerance: f64 },

    #[error("{what}: linear solve did not reach tolerance (residual {residual:e}, tolerance {tolerance:e})")]
    SolverDivergence {
        what: &'static str,
        residual: f64,
        tolerance: f64,
    },

    #[error("linear system is singular at pivot {pivot}")]
    LinearSolveDivergence { pivot: usize },

    #[error("value {value} lies outside the domain ({lo}, {hi}) of the potential")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("resolvent root solve failed for r = {r}")]
    RootSolveFailure { r: f64 },

    #[error("Newton iteration diverged at time level {level}: residual {residual:e} after {iterations} iterations")]
    NewtonDivergence {
        level: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("iterate left the domain of the potential at time level {level}")]
    DomainEscape { level: usize },

    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("configuration failed validation:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("could not parse configuration: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

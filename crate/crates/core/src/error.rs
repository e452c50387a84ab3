use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid spec{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    InvalidSpec { line: Option<usize>, message: String },

    #[error("row {row} is not stochastic (sum = {sum})")]
    NotStochastic { row: usize, sum: f64 },

    #[error("submatrix on states {states:?} is not irreducible")]
    NotIrreducible { states: Vec<usize> },

    #[error("{what} did not converge (last residual {residual:e})")]
    NotConverged { what: &'static str, residual: f64 },

    #[error("index {index} is out of range: {message}")]
    OutOfRange { index: u64, message: String },

    #[error("budget exceeded: {required} cells required, limit {limit}")]
    Overflow { required: u64, limit: u64 },

    #[error("unsupported dimension d = {0}")]
    UnsupportedDimension(usize),

    #[error("indeterminate extended sum (+inf) + (-inf)")]
    IndeterminateSum,

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn spec(message: impl Into<String>) -> Self {
        Error::InvalidSpec { line: None, message: message.into() }
    }

    pub(crate) fn spec_at(line: usize, message: impl Into<String>) -> Self {
        Error::InvalidSpec { line: Some(line), message: message.into() }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotConverged { .. } => 2,
            Error::Overflow { .. } => 3,
            _ => 1,
        }
    }

    /// Short machine-parsable tag printed in front of CLI error lines.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::InvalidSpec { .. } | Error::NotStochastic { .. } => "spec",
            Error::NotIrreducible { .. } => "structure",
            Error::NotConverged { .. } => "convergence",
            Error::OutOfRange { .. } => "range",
            Error::Overflow { .. } => "budget",
            Error::UnsupportedDimension(_) => "dimension",
            Error::IndeterminateSum => "numerics",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

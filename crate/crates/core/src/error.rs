use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("agent {agent}: zero noise volatility means infinite precision, which is unsupported")]
    InfinitePrecision { agent: usize },

    #[error("degenerate horizon: t = {t} must be < 1")]
    DegenerateHorizon { t: f64 },

    #[error(
        "degenerate correlation: covariance of the remaining agents is singular for agent {agent}"
    )]
    DegenerateCorrelation { agent: usize },

    #[error("inverted interval: start {start} is not before end {end}")]
    InvertedInterval { start: f64, end: f64 },

    #[error("non-positive observation {value} for agent {agent}")]
    NonPositiveObservation { agent: usize, value: f64 },

    #[error("empty disclosure set")]
    EmptyDisclosure,

    #[error("agent index {agent} out of range for m = {m}")]
    AgentOutOfRange { agent: usize, m: usize },

    #[error("grid/path mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("insufficient sample: {found} qualifying paths, need at least {needed}")]
    InsufficientSample { found: usize, needed: usize },

    #[error("empty conditioning set: {0}")]
    EmptyConditioning(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

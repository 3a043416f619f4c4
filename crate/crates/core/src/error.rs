use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("vector lies outside the cone: {0}")]
    OutsideCone(String),

    #[error("invalid cone: {0}")]
    InvalidCone(String),

    #[error("cone field has no transport map: {0}")]
    MissingTransport(String),

    #[error("evaluation failed at {state:?}: {reason}")]
    Evaluation { state: Vec<f64>, reason: String },

    #[error("state left the chart domain at {state:?} (coordinate {coordinate})")]
    LeftDomain { state: Vec<f64>, coordinate: usize },

    #[error("integration diverged at t = {time}: {reason}")]
    Diverged { time: f64, reason: String },

    #[error("cone field is not the constant positive orthant")]
    WrongConeKind,

    #[error("no projective contraction: {0}")]
    NonContractive(String),

    #[error("field grid too coarse or incomplete for finite differences: {0}")]
    NeedsDenserGrid(String),

    #[error("no periodic recurrence detected: {0}")]
    NoPeriod(String),

    #[error("fixed point is not a hyperbolic saddle: {0}")]
    NotHyperbolic(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("config error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("expression error at offset {offset}: {message}")]
    Expression { offset: usize, message: String },
}

impl Error {
    /// Stable machine-readable tag, used in the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::OutsideCone(_) => "OutsideCone",
            Error::InvalidCone(_) => "InvalidCone",
            Error::MissingTransport(_) => "MissingTransport",
            Error::Evaluation { .. } => "EvaluationError",
            Error::LeftDomain { .. } => "LeftDomain",
            Error::Diverged { .. } => "Diverged",
            Error::WrongConeKind => "WrongConeKind",
            Error::NonContractive(_) => "NonContractive",
            Error::NeedsDenserGrid(_) => "NeedsDenserGrid",
            Error::NoPeriod(_) => "NoPeriod",
            Error::NotHyperbolic(_) => "NotHyperbolic",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::Config { .. } => "ConfigError",
            Error::Expression { .. } => "ExpressionError",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

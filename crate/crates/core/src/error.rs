use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("not a generator: {0}")]
    NotAGenerator(String),

    #[error("generator is reducible: phase {from} cannot reach phase {to}")]
    Reducible { from: usize, to: usize },

    #[error("singular linear system ({0})")]
    Singular(&'static str),

    #[error("singular block: {0}")]
    SingularBlock(&'static str),

    #[error("Kronecker system of size {size} exceeds the cap {cap}")]
    SizeLimit { size: usize, cap: usize },

    #[error("spectral radius of exp(M) is within the margin of 1 (estimate {radius})")]
    Inconclusive { radius: f64 },

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("model has no phases with {0} fluid rate")]
    EmptySide(&'static str),

    #[error("invalid epsilon {eps}: {reason}")]
    InvalidEpsilon { eps: f64, reason: String },

    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),

    #[error("operation requires regime {expected}, got {actual}")]
    WrongRegime {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("inner Riccati equation for the split zero-rate phases diverged: {0}")]
    InnerRiccatiDiverged(String),

    #[error("model is not positive recurrent (mean drift {drift})")]
    NotRecurrent { drift: f64 },

    #[error("normalization of the boundary masses failed")]
    SingularNormalization,

    #[error("first-order density corrections require a generator perturbation")]
    NotGeneratorKind,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("calibration infeasible: required negative rate is {0}")]
    Infeasible(f64),

    #[error("unknown case id '{0}'")]
    UnknownCase(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable identifier, used in CLI error reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonFinite(_) => "NonFinite",
            Error::NotAGenerator(_) => "NotAGenerator",
            Error::Reducible { .. } => "Reducible",
            Error::Singular(_) => "Singular",
            Error::SingularBlock(_) => "SingularBlock",
            Error::SizeLimit { .. } => "SizeLimit",
            Error::Inconclusive { .. } => "Inconclusive",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::EmptySide(_) => "EmptySide",
            Error::InvalidEpsilon { .. } => "InvalidEpsilon",
            Error::InvalidPerturbation(_) => "InvalidPerturbation",
            Error::WrongRegime { .. } => "WrongRegime",
            Error::InnerRiccatiDiverged(_) => "InnerRiccatiDiverged",
            Error::NotRecurrent { .. } => "NotRecurrent",
            Error::SingularNormalization => "SingularNormalization",
            Error::NotGeneratorKind => "NotGeneratorKind",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::Infeasible(_) => "Infeasible",
            Error::UnknownCase(_) => "UnknownCase",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "IO",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared by every analysis and simulation path.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate profile: gaussian and lorentzian widths are both zero")]
    DegenerateProfile,

    #[error("FWHM mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("format error at line {line}: {message}")]
    Format { line: u64, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("quadrature did not reach the requested accuracy (estimate {estimate:e}, requested {requested:e})")]
    Accuracy { estimate: f64, requested: f64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("empty ensemble: {0}")]
    EmptyEnsemble(String),

    #[error("histogram binning mismatch")]
    BinMismatch,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

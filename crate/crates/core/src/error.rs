use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("history underrun: lag {lag} exceeds span {span}")]
    HistoryUnderrun { lag: f64, span: f64 },

    #[error("loss of control at t = {t}: {reason}")]
    LossOfControl { t: f64, reason: String },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular jacobian: {0}")]
    SingularJacobian(String),

    #[error("aliasing: {samples} samples cannot resolve order {order} (need at least {required})")]
    Aliasing {
        samples: usize,
        order: usize,
        required: usize,
    },

    #[error("no fold in branch")]
    NoFold,

    #[error("coincident points")]
    CoincidentPoints,

    #[error("start point not converged: {0}")]
    StartNotConverged(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag, used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::HistoryUnderrun { .. } => "history-underrun",
            Error::LossOfControl { .. } => "loss-of-control",
            Error::NoConvergence { .. } => "no-convergence",
            Error::SingularJacobian(_) => "singular-jacobian",
            Error::Aliasing { .. } => "aliasing",
            Error::NoFold => "no-fold",
            Error::CoincidentPoints => "coincident-points",
            Error::StartNotConverged(_) => "start-not-converged",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

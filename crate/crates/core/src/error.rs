use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {what} (got {value})")]
    Domain { what: &'static str, value: f64 },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid array layout: {0}")]
    InvalidArray(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operand shapes disagree: {0}")]
    Shape(String),

    #[error("singular system (condition estimate {cond_estimate:.3e})")]
    Singular { cond_estimate: f64 },

    #[error("iterative solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("series did not converge within {terms} terms")]
    SeriesDivergence { terms: usize },

    #[error("least-squares system is rank deficient; use a positive regularization weight")]
    RankDeficient,

    #[error("optimizer diverged on tone {tone} at iteration {iteration}: objective {objective:.3e} vs initial {initial:.3e}")]
    Divergence { tone: usize, iteration: usize, objective: f64, initial: f64 },

    #[error("modeled received power has zero mean for transmitter {tx}")]
    ZeroModelPower { tx: usize },

    #[error("link tx={tx} rx={rx} tone={tone} has zero amplitude")]
    ZeroAmplitude { tx: usize, rx: usize, tone: usize },

    #[error("no gain calibrated for link tx={tx} rx={rx}")]
    MissingGain { tx: usize, rx: usize },

    #[error("malformed {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics themselves (as opposed to bad inputs).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NoConvergence { .. }
                | Error::SeriesDivergence { .. }
                | Error::RankDeficient
                | Error::Divergence { .. }
                | Error::ZeroModelPower { .. }
        )
    }
}

use thiserror::Error;

/// Errors raised by the simulation and analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside its physical or numerical domain.
    #[error("parameter `{name}` out of domain: {reason}")]
    Domain { name: &'static str, reason: String },

    /// An input combination for which the quantity is undefined.
    #[error("undefined input: {0}")]
    Undefined(String),

    /// The decoy-state linear program has no feasible point.
    #[error("infeasible decoy constraints: {0}")]
    Infeasible(String),

    /// An iterative routine received a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Post-selection retained nothing.
    #[error("empty selection: {0}")]
    EmptySelection(String),

    /// The optimizer never found a positive key rate.
    #[error("no positive-rate region found after {restarts} restarts")]
    NoPositiveRate { restarts: usize },

    /// Configuration could not be loaded or validated.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            name,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::Undefined(_) => "undefined",
            Error::Infeasible(_) => "infeasible",
            Error::NonFinite(_) => "non_finite",
            Error::EmptySelection(_) => "empty_selection",
            Error::NoPositiveRate { .. } => "no_positive_rate",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Checks `value` is finite and inside `[lo, hi]`.
pub(crate) fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if !value.is_finite() || value < lo || value > hi {
        return Err(Error::domain(
            name,
            format!("{value} not in [{lo}, {hi}]"),
        ));
    }
    Ok(())
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::domain(name, format!("{value} must be positive")));
    }
    Ok(())
}

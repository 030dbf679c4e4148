use std::fmt;

use thiserror::Error;

/// Partial-sum record of an improper integral, kept so that a caller can
/// print why a verdict was (or was not) reached.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub cutoffs: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub note: String,
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.note.is_empty() {
            write!(f, "{}; ", self.note)?;
        }
        let n = self.cutoffs.len();
        let start = n.saturating_sub(4);
        write!(f, "last partial sums:")?;
        for k in start..n {
            write!(f, " [cutoff {:.6e}: {:.6e}]", self.cutoffs[k], self.partial_sums[k])?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("InvalidInterval: {0}")]
    InvalidInterval(String),
    #[error("NonFinite: integrand is not finite near {at} ({context})")]
    NonFinite { at: f64, context: String },
    #[error("InfiniteScale: the scale function is infinite at {0}")]
    InfiniteScale(f64),
    #[error("NotTransient: both scale limits are infinite, the diffusion is recurrent")]
    NotTransient,
    #[error("ZeroMeasure: the Revuz measure does not charge the state space")]
    ZeroMeasure,
    #[error("Inconclusive: {what}: {diagnostics}")]
    Inconclusive { what: String, diagnostics: Diagnostics },
    #[error("WrongClass: {0}")]
    WrongClass(String),
    #[error("NotSubharmonic: {0}")]
    NotSubharmonic(String),
    #[error("Unsupported: {0}")]
    Unsupported(String),
    #[error("NonIntegrable: {0}")]
    NonIntegrable(String),
    #[error("Inadmissible: {0}")]
    Inadmissible(String),
    #[error("NoConvergence: {0}")]
    NoConvergence(String),
    #[error("HypothesisFails: {0}")]
    HypothesisFails(String),
    #[error("NotNatural: {0}")]
    NotNatural(String),
    #[error("Singular: {0}")]
    Singular(String),
    #[error("VanishingG: g must be strictly positive, found {value} at {at}")]
    VanishingG { at: f64, value: f64 },
    #[error("UnsupportedSpec: {0}")]
    UnsupportedSpec(String),
    #[error("UnsupportedMeasure: {0}")]
    UnsupportedMeasure(String),
    #[error("ParseError at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("Config: {0}")]
    Config(String),
    #[error("Precondition: {0}")]
    Precondition(String),
}

impl Error {
    /// Stable short name, used by the CLI when reporting failures.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidInterval(_) => "InvalidInterval",
            Error::NonFinite { .. } => "NonFinite",
            Error::InfiniteScale(_) => "InfiniteScale",
            Error::NotTransient => "NotTransient",
            Error::ZeroMeasure => "ZeroMeasure",
            Error::Inconclusive { .. } => "Inconclusive",
            Error::WrongClass(_) => "WrongClass",
            Error::NotSubharmonic(_) => "NotSubharmonic",
            Error::Unsupported(_) => "Unsupported",
            Error::NonIntegrable(_) => "NonIntegrable",
            Error::Inadmissible(_) => "Inadmissible",
            Error::NoConvergence(_) => "NoConvergence",
            Error::HypothesisFails(_) => "HypothesisFails",
            Error::NotNatural(_) => "NotNatural",
            Error::Singular(_) => "Singular",
            Error::VanishingG { .. } => "VanishingG",
            Error::UnsupportedSpec(_) => "UnsupportedSpec",
            Error::UnsupportedMeasure(_) => "UnsupportedMeasure",
            Error::Parse { .. } => "ParseError",
            Error::Config(_) => "Config",
            Error::Precondition(_) => "Precondition",
        }
    }

    pub fn is_inconclusive(&self) -> bool {
        matches!(self, Error::Inconclusive { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// The `Display` output is a single line so the CLI can emit it verbatim as a
/// machine-parsable error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("range: {0}")]
    Range(String),
    #[error("format: {0}")]
    Format(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("dimension: {0}")]
    Dimension(String),
    #[error("fit: {0}")]
    Fit(String),
    #[error("rank: {0}")]
    Rank(String),
    #[error("convergence: {0}")]
    Convergence(String),
    #[error("coverage: {0}")]
    Coverage(String),
    #[error("contract: {0}")]
    Contract(String),
    #[error("non-psd: covariance at pixel (row {row}, col {col})")]
    NonPsd { row: usize, col: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable tag, used as the prefix of CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Range(_) => "range",
            Error::Format(_) => "format",
            Error::Domain(_) => "domain",
            Error::Dimension(_) => "dimension",
            Error::Fit(_) => "fit",
            Error::Rank(_) => "rank",
            Error::Convergence(_) => "convergence",
            Error::Coverage(_) => "coverage",
            Error::Contract(_) => "contract",
            Error::NonPsd { .. } => "non-psd",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

use thiserror::Error;

use crate::distributions::EmgParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("posterior undefined: observation {index} has zero density under both components")]
    UndefinedPosterior { index: usize },

    #[error("CM-step for beta failed: {0}")]
    Step(String),

    /// The EMG block relaxation stopped early; `last` is the last iterate that
    /// passed validation.
    #[error("EMG fit failed: {message}")]
    EmgFit { message: String, last: Box<EmgParams> },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("information matrix is not positive definite ({0})")]
    Information(String),

    #[error("bootstrap failed: {failures} of {replicates} replicate fits failed")]
    Bootstrap { failures: usize, replicates: usize },

    #[error("monte carlo study aborted: {failures} of {replicates} replicate fits failed at n = {n}")]
    MonteCarlo { failures: usize, replicates: usize, n: usize },

    #[error("no model could be fitted: {0}")]
    NoWinner(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("truncation at T = {threshold} leaves no observations")]
    EmptyTruncation { threshold: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Dimension(_) => "dimension",
            Error::RankDeficient => "rank_deficient",
            Error::UndefinedPosterior { .. } => "undefined_posterior",
            Error::Step(_) => "step",
            Error::EmgFit { .. } => "emg_fit",
            Error::Fit(_) => "fit",
            Error::Information(_) => "information",
            Error::Bootstrap { .. } => "bootstrap",
            Error::MonteCarlo { .. } => "monte_carlo",
            Error::NoWinner(_) => "no_winner",
            Error::Ingest(_) => "ingest",
            Error::EmptyTruncation { .. } => "empty_truncation",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

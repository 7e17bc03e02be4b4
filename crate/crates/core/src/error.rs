use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no records for area {0}")]
    EmptyArea(u32),
    #[error("variance undefined for singleton sample (area {0})")]
    SingletonVariance(u32),
    #[error("unstable estimate; transform undefined")]
    Unstable,
    #[error("degenerate chains")]
    DegenerateChains,
    #[error("no variation in direct estimates")]
    NoVariation,
    #[error("degenerate sample")]
    DegenerateSample,
    #[error("relative metric undefined")]
    ZeroTruth,
    #[error("census required")]
    CensusRequired,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("sampler failure: {0}")]
    Sampler(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by malformed input data rather than configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyArea(_)
                | Error::SingletonVariance(_)
                | Error::Unstable
                | Error::NoVariation
                | Error::DegenerateSample
                | Error::CensusRequired
                | Error::Invalid(_)
                | Error::Csv(_)
        )
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("line {line}: time {t} lies outside the domain (0, 1)")]
    Domain { line: u64, t: f64 },

    #[error("line {line}: non-finite value")]
    Value { line: u64 },

    #[error("dataset contains no observations")]
    EmptyDataset,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("insufficient data: only {retained} curves usable")]
    InsufficientData { retained: usize },

    #[error("degenerate increments: theta estimates must be positive (got {theta_13}, {theta_12})")]
    DegenerateIncrement { theta_13: f64, theta_12: f64 },

    #[error("no admissible bandwidth at t = {t}")]
    NoAdmissibleBandwidth { t: f64 },

    #[error("covariance surface: {0}")]
    Surface(String),

    #[error("sample generation failed for curve {curve}: {msg}")]
    Generation { curve: usize, msg: String },

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("experiment: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input or parameters, as opposed to
    /// failures of the estimation itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Domain { .. }
                | Error::Value { .. }
                | Error::EmptyDataset
                | Error::InvalidArgument(_)
                | Error::Configuration(_)
                | Error::Csv(_)
                | Error::Io(_)
        )
    }
}

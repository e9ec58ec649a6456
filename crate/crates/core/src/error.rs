use thiserror::Error;

/// Errors raised by the estimators, the harness, and the config/CSV layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),

    #[error("level index must be at least 1, got {0}")]
    LevelIndex(u32),

    #[error("expected work diverges for gamma = {0} (requires gamma > 1)")]
    DivergentWork(f64),

    #[error("strong order not estimable: {0}")]
    NotEstimable(String),

    #[error("statistic undefined for {count} sample(s); at least 2 are required")]
    TooFewSamples { count: u64 },

    #[error("MLMC did not converge before reaching the level cap of {cap}")]
    LevelCapExceeded { cap: u32 },

    #[error("no closed-form value is known for {0}")]
    UnknownTrueValue(String),

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("refusing to write an empty table")]
    EmptyTable,

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("integration diverged at step {step}")]
    Diverged { step: usize },

    #[error("insufficient ensemble: {0} members, at least 2 required")]
    InsufficientEnsemble(usize),

    #[error("ensemble filter degenerate at step {step}: innovation covariance is singular")]
    FilterDegenerate { step: usize },

    #[error("non-finite cost while differentiating control ({step}, {channel})")]
    Gradient { step: usize, channel: usize },

    #[error("impulse experiment on input ({step}, {channel}) diverged; reduce epsilon")]
    ImpulseDiverged { step: usize, channel: usize },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("ill-posed regulator cost at step {step}: R + B'SB is not invertible")]
    IllPosedCost { step: usize },

    #[error("degenerate measurement at step {step}: innovation covariance is singular")]
    DegenerateMeasurement { step: usize },

    #[error("holdout set is empty")]
    EmptyHoldout,

    #[error("{failed} of {total} Monte Carlo runs diverged")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

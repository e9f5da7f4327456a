use thiserror::Error;

#[derive(Error, Debug)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("infeasible timeline: {0}")]
    InfeasibleTimeline(String),

    #[error("unknown anomaly type `{0}`")]
    UnknownAnomaly(String),

    #[error(transparent)]
    Core(#[from] telesto_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

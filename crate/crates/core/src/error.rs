use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A spec (architecture, corpus, experiment) violates a structural precondition.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// Runtime data does not match what an operation requires (shapes, arity, ranges).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A training or protocol configuration is inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A layer argument is outside the set an operation accepts.
    #[error("invalid layer: {0}")]
    InvalidLayer(String),

    /// An operation attempted to mutate (or schedule for training) frozen parameters.
    #[error("frozen violation: {0}")]
    FrozenViolation(String),

    /// `step` was called on a finished episode.
    #[error("episode already finished")]
    EpisodeFinished,

    /// The expert could not find a path to the goal.
    #[error("no path from agent to goal")]
    NoPath,

    /// An evaluation protocol's preconditions are not met.
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),

    /// The requested feature source is not available for this environment.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

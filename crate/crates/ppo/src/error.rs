use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid ppo config: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error("non-finite {what} at update {update}, minibatch {minibatch}: {detail}")]
    NonFinite {
        what: String,
        update: usize,
        minibatch: usize,
        detail: String,
    },
    #[error(transparent)]
    Core(#[from] crafter_core::CoreError),
    #[error(transparent)]
    Agent(#[from] crafter_agents::AgentError),
    #[error(transparent)]
    Nn(#[from] crafter_nnet::NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PpoError>;

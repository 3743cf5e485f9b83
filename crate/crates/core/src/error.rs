use thiserror::Error;

use crate::material::Material;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("world generation failed: {0}")]
    Generation(String),

    #[error("not enough candidate cells for {class}: wanted {wanted}, only {available} available")]
    InsufficientCells {
        class: &'static str,
        wanted: usize,
        available: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("unknown material `{0}`")]
    UnknownMaterial(String),

    #[error("unexpected material {0:?}")]
    UnexpectedMaterial(Material),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("failed to parse toml: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

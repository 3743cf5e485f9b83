//! Policy networks for Crafter: strided and size-preserving CNNs, LSTM
//! variants, and object-centric self- and cross-attention agents.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod overlay;
pub mod policy;

pub use attention::{extract_attention, AttentionMap, AttentionOutput, AttentionQuery, PatchGeometry};
pub use config::{apply_ablation, Ablation, AgentConfig, Architecture, ConvLayer};
pub use error::{AgentError, Result};
pub use overlay::{export, montage, overlay};
pub use policy::{
    count_params, observation_batch, plan, GraphOutput, Policy, PolicyOutput, RecurrentState, StateVars,
};

/// Side of the square observation.
pub const IMAGE: usize = 64;
pub const N_ACTIONS: usize = 17;

pub type Policy32Output = PolicyOutput<f32>;
pub type Policy64Output = PolicyOutput<f64>;

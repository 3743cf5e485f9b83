//! Proximal policy optimization with generalized advantage estimation,
//! rollout collection over vectorized environments, and evaluation.

pub mod actor;
pub mod buffer;
pub mod config;
pub mod dist;
pub mod error;
pub mod eval;
pub mod gae;
pub mod train;
pub mod update;

pub use actor::{ActionMode, Actor, PolicyActor, RandomActor, ScriptedActor};
pub use buffer::{explained_variance, RolloutBuffer, Sequence};
pub use config::{cartesian, one_at_a_time, published_grid, PpoConfig, SweepAxis};
pub use error::{PpoError, Result};
pub use eval::{evaluate, EvalReport};
pub use gae::compute_gae;
pub use train::{train, Collector, IterationRecord, TrainOptions, TrainOutcome, TrainReport};
pub use update::{normalize_advantages, ppo_loss, ppo_update, Targets, UpdateStats};

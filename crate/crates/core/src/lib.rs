//! Deterministic Crafter world simulation with out-of-distribution variants.

pub mod achievement;
pub mod env;
pub mod error;
pub mod material;
pub mod noise;
pub mod observe;
pub mod ood;
pub mod rng;
pub mod rules;
pub mod scoring;
pub mod sim;
pub mod techtree;
pub mod world;
pub mod worldgen;

pub use achievement::{Achievement, AchievementSet};
pub use error::{CoreError, Result};
pub use material::{Action, Direction, Item, Material};
pub use ood::{AppearanceDist, CountTargets, EnvSpec, NumScaling, ScenarioPair, VariantClass, VariantProbs};
pub use rules::Rules;
pub use sim::{can_apply, step, StepEvents};
pub use world::{count_materials, Creature, CreatureKind, PlayerState, Pos, WorldMap, WorldState};
pub use worldgen::{generate, generate_mini, GenParams, Generated};
pub use env::{Env, EpisodeRecord, StatsLine, StatsLog, StepResult, VecEnv};
pub use observe::{render, Observation};
pub use scoring::{crafter_score, success_rates, AchievementLedger, ScoreInput};

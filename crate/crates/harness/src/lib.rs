//! Command line tools and the human-play server.

pub mod cli;
pub mod config;
pub mod error;
pub mod protocol;
pub mod server;

pub use cli::run;
pub use config::{resolve_env, RunConfig};
pub use error::{HarnessError, Result};

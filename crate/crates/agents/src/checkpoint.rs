use std::path::Path;

use crafter_nnet::{ParamStore, Scalar};

use crate::config::AgentConfig;
use crate::error::{AgentError, Result};
use crate::policy::Policy;

pub fn save<T: Scalar>(path: &Path, config: &AgentConfig, store: &ParamStore<T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    store.save(path, &config.to_json(), &config.digest())?;
    Ok(())
}

/// Loads a checkpoint with the config stored in its header.
pub fn load<T: Scalar>(path: &Path) -> Result<(AgentConfig, Policy, ParamStore<T>)> {
    let (store, header) = ParamStore::<T>::load(path)?;
    let config: AgentConfig = serde_json::from_value(header.config.clone())
        .map_err(|e| AgentError::Config(format!("checkpoint config: {e}")))?;
    if config.digest() != header.config_digest {
        return Err(AgentError::Config("checkpoint config does not match its digest".into()));
    }
    let policy = Policy::bind(&config, &store)?;
    Ok((config, policy, store))
}

/// Loads a checkpoint, refusing it unless it was written for `expected`.
pub fn load_matching<T: Scalar>(path: &Path, expected: &AgentConfig) -> Result<(Policy, ParamStore<T>)> {
    let (config, policy, store) = load(path)?;
    if config.digest() != expected.digest() {
        return Err(AgentError::Config(format!(
            "checkpoint was trained with a different agent config ({} vs {})",
            &config.digest()[..12],
            &expected.digest()[..12]
        )));
    }
    Ok((policy, store))
}

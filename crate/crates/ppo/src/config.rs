use serde::{Deserialize, Serialize};

use crate::error::{PpoError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Transitions collected per update, summed over lanes.
    pub n_rollout_steps: usize,
    pub n_epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub max_grad_norm: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub adam_eps: f64,
    pub n_lanes: usize,
    pub total_steps: u64,
    /// Truncated backpropagation length for recurrent agents.
    pub seq_len: usize,
    /// Environment steps between evaluations; 0 disables.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Environment steps between checkpoints; 0 disables.
    pub checkpoint_interval: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 128,
            n_rollout_steps: 4096,
            n_epochs: 4,
            gamma: 0.95,
            gae_lambda: 0.65,
            clip_range: 0.2,
            max_grad_norm: 0.5,
            ent_coef: 0.01,
            vf_coef: 0.5,
            adam_eps: 1e-5,
            n_lanes: 8,
            total_steps: 1_000_000,
            seq_len: 16,
            eval_interval: 0,
            eval_episodes: 100,
            checkpoint_interval: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PpoError::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.n_epochs == 0 || self.n_lanes == 0 || self.seq_len == 0 {
            return bad("batch_size, n_epochs, n_lanes and seq_len must be positive");
        }
        if self.n_rollout_steps < self.n_lanes || self.n_rollout_steps % self.n_lanes != 0 {
            return bad("n_rollout_steps must be a positive multiple of n_lanes");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.clip_range < 0.0 || self.max_grad_norm <= 0.0 || self.ent_coef < 0.0 || self.vf_coef < 0.0 {
            return bad("clip_range, coefficients must be non-negative and max_grad_norm positive");
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return bad("periodic evaluation needs eval_episodes > 0");
        }
        Ok(())
    }

    pub fn steps_per_lane(&self) -> usize {
        self.n_rollout_steps / self.n_lanes
    }

    /// Sets a field by name from text, for CLI overrides and sweeps.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = || {
            value
                .parse::<f64>()
                .map_err(|_| PpoError::Config(format!("{key}: expected a number, got {value:?}")))
        };
        let u = || {
            value
                .parse::<u64>()
                .map_err(|_| PpoError::Config(format!("{key}: expected an integer, got {value:?}")))
        };
        match key {
            "learning_rate" => self.learning_rate = f()?,
            "batch_size" => self.batch_size = u()? as usize,
            "n_rollout_steps" => self.n_rollout_steps = u()? as usize,
            "n_epochs" => self.n_epochs = u()? as usize,
            "gamma" => self.gamma = f()?,
            "gae_lambda" => self.gae_lambda = f()?,
            "clip_range" => self.clip_range = f()?,
            "max_grad_norm" => self.max_grad_norm = f()?,
            "ent_coef" => self.ent_coef = f()?,
            "vf_coef" => self.vf_coef = f()?,
            "adam_eps" => self.adam_eps = f()?,
            "n_lanes" => self.n_lanes = u()? as usize,
            "total_steps" => self.total_steps = u()?,
            "seq_len" => self.seq_len = u()? as usize,
            "eval_interval" => self.eval_interval = u()?,
            "eval_episodes" => self.eval_episodes = u()? as usize,
            "checkpoint_interval" => self.checkpoint_interval = u()?,
            _ => return Err(PpoError::Config(format!("unknown ppo setting {key:?}"))),
        }
        Ok(())
    }
}

/// One swept hyper-parameter and its candidate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<String>,
}

/// The searched grid, one axis per tuned hyper-parameter.
pub fn published_grid() -> Vec<SweepAxis> {
    let axis = |key: &str, values: &[&str]| SweepAxis {
        key: key.into(),
        values: values.iter().map(|v| v.to_string()).collect(),
    };
    vec![
        axis("learning_rate", &["0.001", "0.0005", "0.0003", "0.0001", "0.00005"]),
        axis("batch_size", &["64", "128", "256"]),
        axis("n_rollout_steps", &["1024", "2048", "4096", "8192", "16384"]),
        axis("n_epochs", &["3", "4", "6", "7", "10"]),
        axis("gamma", &["0.8", "0.9", "0.95", "0.97", "0.99"]),
        axis("gae_lambda", &["0.5", "0.65", "0.75", "0.85", "0.95"]),
        axis("clip_range", &["0.1", "0.2", "0.3"]),
        axis("max_grad_norm", &["0.1", "0.3", "0.5", "1.0"]),
    ]
}

/// Configs varying one axis at a time around `base`.
pub fn one_at_a_time(base: &PpoConfig, axes: &[SweepAxis]) -> Result<Vec<(String, PpoConfig)>> {
    let mut out = Vec::new();
    for axis in axes {
        for v in &axis.values {
            let mut cfg = base.clone();
            cfg.set(&axis.key, v)?;
            out.push((format!("{}={v}", axis.key), cfg));
        }
    }
    Ok(out)
}

/// Full cartesian product of the axes.
pub fn cartesian(base: &PpoConfig, axes: &[SweepAxis]) -> Result<Vec<(String, PpoConfig)>> {
    let mut out = vec![(String::new(), base.clone())];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.values.len());
        for (label, cfg) in &out {
            for v in &axis.values {
                let mut c = cfg.clone();
                c.set(&axis.key, v)?;
                let l = if label.is_empty() {
                    format!("{}={v}", axis.key)
                } else {
                    format!("{label},{}={v}", axis.key)
                };
                next.push((l, c));
            }
        }
        out = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_tuned_values() {
        let c = PpoConfig::default();
        assert_eq!(
            (c.learning_rate, c.batch_size, c.n_rollout_steps, c.n_epochs),
            (3e-4, 128, 4096, 4)
        );
        assert_eq!((c.gamma, c.gae_lambda, c.clip_range, c.max_grad_norm), (0.95, 0.65, 0.2, 0.5));
        c.validate().unwrap();
    }

    #[test]
    fn grid_contains_defaults_and_expands() {
        let base = PpoConfig::default();
        let grid = published_grid();
        let singles = one_at_a_time(&base, &grid).unwrap();
        assert_eq!(singles.len(), 5 + 3 + 5 + 5 + 5 + 5 + 3 + 4);
        let two = cartesian(&base, &grid[..2]).unwrap();
        assert_eq!(two.len(), 15);
        assert_eq!(two[0].1.learning_rate, 0.001);
        assert_eq!(two[0].1.batch_size, 64);
        assert!(base.clone().set("nope", "1").is_err());
        assert!(base.clone().set("gamma", "x").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = PpoConfig::default();
        c.gamma = 1.5;
        assert!(c.validate().is_err());
        let mut c = PpoConfig::default();
        c.n_rollout_steps = 4095;
        assert!(c.validate().is_err());
    }
}

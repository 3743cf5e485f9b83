//! The run configuration file: sections `env`, `agent`, `ppo` and `server`,
//! with `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use crafter_agents::{apply_ablation, Ablation, AgentConfig, Architecture};
use crafter_core::ood::{find_preset, WorldKind};
use crafter_core::{AppearanceDist, EnvSpec, NumScaling};
use crafter_ppo::PpoConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiniWorld {
    pub size: u32,
    pub trees: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// A named train/eval pair; takes precedence over the fields below.
    pub scenario: Option<String>,
    pub appearance: String,
    pub numbers: NumScaling,
    pub eval_appearance: Option<String>,
    pub eval_numbers: Option<NumScaling>,
    pub show_inventory: bool,
    pub episode_cap: u32,
    pub mini: Option<MiniWorld>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            scenario: None,
            appearance: "default".into(),
            numbers: NumScaling::Default,
            eval_appearance: None,
            eval_numbers: None,
            show_inventory: true,
            episode_cap: 10_000,
            mini: None,
        }
    }
}

impl EnvSection {
    /// Training and evaluation environments.
    pub fn specs(&self) -> Result<(EnvSpec, EnvSpec)> {
        let (mut train, mut eval) = match &self.scenario {
            Some(name) => {
                let pair = find_preset(name)?;
                (pair.train, pair.eval)
            }
            None => {
                let train = EnvSpec::default()
                    .with_appearance(AppearanceDist::preset(&self.appearance)?)
                    .with_numbers(self.numbers);
                let eval = EnvSpec::default()
                    .with_appearance(AppearanceDist::preset(
                        self.eval_appearance.as_deref().unwrap_or(&self.appearance),
                    )?)
                    .with_numbers(self.eval_numbers.unwrap_or(self.numbers));
                (train, eval)
            }
        };
        for spec in [&mut train, &mut eval] {
            spec.show_inventory = self.show_inventory;
            spec.episode_cap = self.episode_cap;
            if let Some(m) = self.mini {
                spec.world = WorldKind::Mini {
                    size: m.size,
                    trees: m.trees,
                };
            }
            spec.validate()?;
        }
        Ok((train, eval))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub architecture: String,
    /// Narrow widths for single-core runs.
    pub reduced: bool,
    /// Switches such as `layernorm`, `no-pe`, `slots=4`.
    pub ablations: Vec<String>,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            architecture: Architecture::PpoCnn.name().into(),
            reduced: false,
            ablations: Vec::new(),
        }
    }
}

impl AgentSection {
    pub fn build(&self) -> Result<AgentConfig> {
        let arch = Architecture::parse(&self.architecture)?;
        let base = if self.reduced {
            AgentConfig::reduced(arch)
        } else {
            AgentConfig::new(arch)
        };
        let toggles = self
            .ablations
            .iter()
            .map(|a| Ablation::parse(a))
            .collect::<crafter_agents::Result<Vec<_>>>()?;
        let config = apply_ablation(&base, &toggles)?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub host: String,
    pub port: u16,
    /// Directory with the browser client; a built-in page is served when absent.
    pub static_dir: Option<PathBuf>,
    pub stats_log: PathBuf,
    /// Policy driving spectator sessions; uniform random when absent.
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            static_dir: None,
            stats_log: PathBuf::from("play_stats.jsonl"),
            checkpoint: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSection,
    pub agent: AgentSection,
    pub ppo: PpoConfig,
    pub server: ServerSection,
}

impl RunConfig {
    /// Reads `path` (if any), then applies `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        config.ppo.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serializes")
    }
}

/// Sets `section.key` (dotted paths of any depth) to `value`, which is read
/// as a TOML value and falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, text: &str) -> Result<()> {
    let (path, raw) = text
        .split_once('=')
        .ok_or_else(|| HarnessError::Usage(format!("override `{text}` is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Usage(format!("override path `{path}` needs a section and a key")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{k}` is not a section")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// A named environment for play sessions: a scenario pair (its training
/// side, or evaluation side with an `:eval` suffix), an appearance preset,
/// or a number preset.
pub fn resolve_env(name: &str, base: &EnvSpec) -> Result<EnvSpec> {
    let (head, eval) = match name.strip_suffix(":eval") {
        Some(h) => (h, true),
        None => (name, false),
    };
    let mut spec = if let Ok(pair) = find_preset(head) {
        if eval {
            pair.eval
        } else {
            pair.train
        }
    } else if let Ok(app) = AppearanceDist::preset(head) {
        base.clone().with_appearance(app)
    } else if let Ok(n) = head.parse::<NumScaling>() {
        base.clone().with_numbers(n)
    } else {
        return Err(HarnessError::Config(format!("unknown environment preset `{name}`")));
    };
    spec.show_inventory = base.show_inventory;
    spec.episode_cap = base.episode_cap;
    spec.world = base.world;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!(c.ppo, PpoConfig::default());
        assert_eq!(c.server.port, 8080);
        let (train, eval) = c.env.specs().unwrap();
        assert_eq!(train, EnvSpec::default());
        assert_eq!(eval, EnvSpec::default());
    }

    #[test]
    fn overrides_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[ppo]\nlearning_rate = 0.001\nbatch_size = 64\n[agent]\narchitecture = \"oc-ca\"\n").unwrap();
        let c = RunConfig::load(Some(&path), &["ppo.batch_size=256".into(), "env.mini.size=16".into(), "env.mini.trees=8".into()]).unwrap();
        assert_eq!(c.ppo.learning_rate, 0.001);
        assert_eq!(c.ppo.batch_size, 256);
        assert_eq!(c.env.mini, Some(MiniWorld { size: 16, trees: 8 }));
        assert_eq!(c.agent.build().unwrap().architecture, Architecture::OcCa);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let e = RunConfig::load(None, &["ppo.learnin_rate=0.1".into()]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::load(None, &["ppo.batch_size=0".into()]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = RunConfig::load(None, &["nonsense".into()]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn string_values_need_no_quotes() {
        let c = RunConfig::load(None, &["env.scenario=num_easy_x4_to_default".into()]).unwrap();
        let (train, eval) = c.env.specs().unwrap();
        assert_eq!(train.numbers, NumScaling::EasyX4);
        assert_eq!(eval.numbers, NumScaling::Default);
    }

    #[test]
    fn ablations_reach_the_agent() {
        let c = RunConfig::load(None, &["agent.architecture=oc-ca".into(), "agent.ablations=[\"slots=4\", \"no-pe\"]".into()]).unwrap();
        let a = c.agent.build().unwrap();
        assert_eq!(a.n_slots, 4);
        assert!(!a.use_positional_embeddings);
        let c = RunConfig::load(None, &["agent.ablations=[\"layernorm\"]".into()]).unwrap();
        assert_eq!(c.agent.build().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn named_environments() {
        let base = EnvSpec::mini(16, 8, 100);
        let s = resolve_env("app_o1_97", &base).unwrap();
        assert_eq!(s.appearance.tree.0[0], 0.97);
        assert_eq!(s.world, base.world);
        let s = resolve_env("app_o1_97:eval", &base).unwrap();
        assert_eq!(s.appearance.tree.0[0], 0.0);
        assert_eq!(resolve_env("hard_x4", &base).unwrap().numbers, NumScaling::HardX4);
        assert!(resolve_env("o1_97", &base).is_ok());
        assert!(resolve_env("bogus", &base).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let c = RunConfig::load(None, &["server.static_dir=\"web\"".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, c.to_toml()).unwrap();
        assert_eq!(RunConfig::load(Some(&path), &[]).unwrap(), c);
    }
}

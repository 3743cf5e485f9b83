//! Episode-facing environment: reset/step, batched lanes, stats log and
//! replay records.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::achievement::{Achievement, AchievementSet};
use crate::error::{CoreError, Result};
use crate::material::{Action, Item};
use crate::observe::{render, Observation};
use crate::ood::{EnvSpec, SeedPolicy, WorldKind};
use crate::rng::split_seed;
use crate::rules::Rules;
use crate::scoring::{reward, AchievementLedger};
use crate::sim::{self, StepEvents};
use crate::world::{CreatureKind, PlayerState, PopulationConfig, WorldState};
use crate::worldgen::{generate, generate_mini, GenParams};

pub const MAX_ARROWS: usize = 32;
pub const REPLAY_VERSION: u32 = 1;

/// Builds the initial world state for an episode.
pub fn build_world(spec: &EnvSpec, seed: u64) -> Result<WorldState> {
    spec.validate()?;
    let (generated, population) = match spec.world {
        WorldKind::Standard => {
            let params = GenParams::new(seed, spec.numbers.targets(), spec.appearance.clone());
            let population = PopulationConfig {
                targets: params.count_targets,
                max_arrows: MAX_ARROWS,
                balance: true,
            };
            (generate(&params)?, population)
        }
        WorldKind::Mini { size, trees } => (
            generate_mini(size, trees, seed, &spec.appearance)?,
            PopulationConfig::disabled(),
        ),
    };
    Ok(WorldState::new(
        generated.map,
        PlayerState::new(generated.player_start),
        generated.creatures,
        spec.episode_cap,
        population,
        spec.appearance.clone(),
        split_seed(seed, 0x5157),
    ))
}

/// Time-averaged cow, zombie and skeleton counts over `steps` ticks of one
/// world. The player idles and its vitals are refilled every tick, so the
/// survey always runs the full length.
pub fn survey_populations(spec: &EnvSpec, seed: u64, steps: u32, rules: &Rules) -> Result<[f64; 3]> {
    let mut state = build_world(spec, seed)?;
    state.episode_cap = u32::MAX;
    let kinds = [CreatureKind::Cow, CreatureKind::Zombie, CreatureKind::Skeleton];
    let mut sums = [0.0; 3];
    for _ in 0..steps {
        for v in Item::VITALS {
            state.player.set(v, Item::MAX);
        }
        sim::step(&mut state, Action::Noop, rules)?;
        for (sum, kind) in sums.iter_mut().zip(kinds) {
            *sum += state.count_of(kind) as f64;
        }
    }
    Ok(sums.map(|s| s / steps.max(1) as f64))
}

/// One finished episode in the stats log.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsLine {
    pub length: u32,
    pub reward: f64,
    pub achievements: [u64; Achievement::COUNT],
}

impl StatsLine {
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("length".into(), self.length.into());
        map.insert("reward".into(), self.reward.into());
        for a in Achievement::ALL {
            map.insert(format!("achievement_{}", a.name()), self.achievements[a.index()].into());
        }
        serde_json::Value::Object(map)
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| CoreError::Config("stats record is not an object".into()))?;
        let field = |k: &str| obj.get(k).ok_or_else(|| CoreError::Config(format!("stats record lacks `{k}`")));
        let length = field("length")?
            .as_u64()
            .ok_or_else(|| CoreError::Config("`length` must be an integer".into()))? as u32;
        let reward = field("reward")?
            .as_f64()
            .ok_or_else(|| CoreError::Config("`reward` must be a number".into()))?;
        let mut achievements = [0; Achievement::COUNT];
        for a in Achievement::ALL {
            let key = format!("achievement_{}", a.name());
            achievements[a.index()] = field(&key)?
                .as_u64()
                .ok_or_else(|| CoreError::Config(format!("`{key}` must be a non-negative integer")))?;
        }
        Ok(Self {
            length,
            reward,
            achievements,
        })
    }

    pub fn unlocked(&self) -> AchievementSet {
        Achievement::ALL
            .into_iter()
            .filter(|a| self.achievements[a.index()] > 0)
            .collect()
    }
}

/// Append-only line-delimited stats sink, shareable across threads.
#[derive(Debug, Clone)]
pub struct StatsLog {
    file: Arc<Mutex<File>>,
}

impl StatsLog {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Arc::new(Mutex::new(file)),
        })
    }

    pub fn append(&self, line: &StatsLine) -> Result<()> {
        let mut text = serde_json::to_string(&line.to_json())?;
        text.push('\n');
        let mut f = self.file.lock().expect("stats log lock poisoned");
        f.write_all(text.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

pub fn read_stats(path: &Path) -> Result<Vec<StatsLine>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(StatsLine::from_json(&serde_json::from_str(&line)?)?);
    }
    Ok(out)
}

/// Run ledger reconstructed from stats records.
pub fn ledger_from_stats(lines: &[StatsLine]) -> AchievementLedger {
    let mut ledger = AchievementLedger::new();
    for line in lines {
        ledger.begin_episode();
        ledger.episode = line.unlocked();
        ledger.end_episode();
    }
    ledger
}

/// Everything needed to replay an episode and check it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub version: u32,
    pub seed: u64,
    pub spec_digest: String,
    pub spec: EnvSpec,
    pub actions: Vec<Action>,
    pub unlocked: Vec<Achievement>,
    pub total_reward: f64,
    pub length: u32,
    /// Hash over every observation, reward and done flag in order.
    pub stream_digest: String,
}

impl EpisodeRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rec: EpisodeRecord = serde_json::from_slice(&std::fs::read(path)?)?;
        if rec.version != REPLAY_VERSION {
            return Err(CoreError::Config(format!("unsupported replay version {}", rec.version)));
        }
        if rec.spec.digest() != rec.spec_digest {
            return Err(CoreError::Config("replay spec does not match its digest".into()));
        }
        Ok(rec)
    }
}

/// Outcome of replaying a record.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub steps: usize,
    pub byte_exact: bool,
    pub first_divergence: Option<String>,
}

fn hash_step(h: &mut Sha256, obs: &Observation, reward: f64, done: bool) {
    h.update(&obs.pixels);
    h.update(reward.to_le_bytes());
    h.update([done as u8]);
}

/// Re-simulates a record and compares it with what was recorded.
pub fn replay(record: &EpisodeRecord, rules: Arc<Rules>) -> Result<ReplayReport> {
    let mut env = Env::with_rules(record.spec.clone(), rules)?;
    env.record_episodes(true);
    env.reset(record.seed)?;
    let mut steps = 0;
    for action in &record.actions {
        if env.is_done() {
            break;
        }
        env.step(*action)?;
        steps += 1;
    }
    let replayed = env
        .last_record()
        .cloned()
        .or_else(|| env.current_record())
        .ok_or_else(|| CoreError::Contract("no record produced".into()))?;
    let mut first_divergence = None;
    if steps != record.actions.len() {
        first_divergence = Some(format!("episode ended after {steps} of {} actions", record.actions.len()));
    } else if replayed.stream_digest != record.stream_digest {
        first_divergence = Some("observation/reward stream differs".into());
    } else if replayed.unlocked != record.unlocked || replayed.total_reward.to_bits() != record.total_reward.to_bits() {
        first_divergence = Some("final ledger differs".into());
    }
    Ok(ReplayReport {
        steps,
        byte_exact: first_divergence.is_none(),
        first_divergence,
    })
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Achievements unlocked for the first time this episode.
    pub unlocked: AchievementSet,
    pub events: StepEvents,
    pub step: u32,
    /// Stats of the finished episode when this step ended it.
    pub episode: Option<StatsLine>,
    /// Set in auto-reset mode when `observation` is the next episode's first frame.
    pub reset: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

struct Recorder {
    actions: Vec<Action>,
    hasher: Sha256,
}

/// A single environment lane.
pub struct Env {
    spec: EnvSpec,
    rules: Arc<Rules>,
    state: Option<WorldState>,
    ledger: AchievementLedger,
    seed: u64,
    done: bool,
    episode_reward: f64,
    stats: Option<StatsLog>,
    recording: bool,
    recorder: Option<Recorder>,
    last_record: Option<EpisodeRecord>,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        Self::with_rules(spec, Arc::new(Rules::default()))
    }

    pub fn with_rules(spec: EnvSpec, rules: Arc<Rules>) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            rules,
            state: None,
            ledger: AchievementLedger::new(),
            seed: 0,
            done: true,
            episode_reward: 0.0,
            stats: None,
            recording: false,
            recorder: None,
            last_record: None,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn rules(&self) -> &Rules {
        &self.rules
    }

    pub fn state(&self) -> Option<&WorldState> {
        self.state.as_ref()
    }

    pub fn state_mut(&mut self) -> Option<&mut WorldState> {
        self.state.as_mut()
    }

    pub fn ledger(&self) -> &AchievementLedger {
        &self.ledger
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn episode_reward(&self) -> f64 {
        self.episode_reward
    }

    pub fn set_stats_log(&mut self, log: Option<StatsLog>) {
        self.stats = log;
    }

    pub fn record_episodes(&mut self, on: bool) {
        self.recording = on;
    }

    /// Record of the most recently finished episode, when recording.
    pub fn last_record(&self) -> Option<&EpisodeRecord> {
        self.last_record.as_ref()
    }

    /// Snapshot of the episode in progress, when recording.
    pub fn current_record(&self) -> Option<EpisodeRecord> {
        let rec = self.recorder.as_ref()?;
        let state = self.state.as_ref()?;
        Some(self.make_record(rec, state))
    }

    fn make_record(&self, rec: &Recorder, state: &WorldState) -> EpisodeRecord {
        EpisodeRecord {
            version: REPLAY_VERSION,
            seed: self.seed,
            spec_digest: self.spec.digest(),
            spec: self.spec.clone(),
            actions: rec.actions.clone(),
            unlocked: self.ledger.episode.iter().collect(),
            total_reward: self.episode_reward,
            length: state.step_count,
            stream_digest: hex::encode(rec.hasher.clone().finalize()),
        }
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let world_seed = match self.spec.seed_policy {
            SeedPolicy::Exact => seed,
            SeedPolicy::Fixed(s) => s,
        };
        let state = build_world(&self.spec, world_seed)?;
        let obs = render(&state, &self.spec);
        self.seed = seed;
        self.state = Some(state);
        self.ledger.begin_episode();
        self.done = false;
        self.episode_reward = 0.0;
        self.recorder = self.recording.then(|| {
            let mut hasher = Sha256::new();
            hasher.update(&obs.pixels);
            Recorder {
                actions: Vec::new(),
                hasher,
            }
        });
        Ok(obs)
    }

    pub fn observe(&self) -> Option<Observation> {
        self.state.as_ref().map(|s| render(s, &self.spec))
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(CoreError::Contract("step called before reset or after episode end".into()));
        }
        let state = self.state.as_mut().expect("reset before step");
        let events = sim::step(state, action, &self.rules)?;
        let (r, unlocked) = reward(&events, &mut self.ledger);
        self.episode_reward += r;
        let done = state.is_terminal();
        let observation = render(state, &self.spec);
        let step = state.step_count;
        if let Some(rec) = self.recorder.as_mut() {
            rec.actions.push(action);
            hash_step(&mut rec.hasher, &observation, r, done);
        }
        let mut episode = None;
        if done {
            self.done = true;
            let line = StatsLine {
                length: step,
                reward: self.episode_reward,
                achievements: Achievement::ALL.map(|a| self.ledger.episode.contains(a) as u64),
            };
            self.ledger.end_episode();
            if let Some(log) = &self.stats {
                log.append(&line)?;
            }
            if let Some(rec) = self.recorder.take() {
                let state = self.state.as_ref().expect("state");
                self.last_record = Some(self.make_record(&rec, state));
            }
            episode = Some(line);
        }
        Ok(StepResult {
            observation,
            reward: r,
            done,
            info: StepInfo {
                unlocked,
                events,
                step,
                episode,
                reset: false,
            },
        })
    }
}

/// Seed of episode `episode` on lane `lane` of a run.
pub fn episode_seed(run_seed: u64, lane: usize, episode: u64) -> u64 {
    split_seed(split_seed(run_seed, lane as u64), episode)
}

struct Lane {
    env: Env,
    index: usize,
    episodes: u64,
}

/// A fixed set of lanes stepped together.
pub struct VecEnv {
    lanes: Vec<Lane>,
    run_seed: u64,
    pub auto_reset: bool,
}

impl VecEnv {
    pub fn new(spec: EnvSpec, n: usize, run_seed: u64) -> Result<Self> {
        let rules = Arc::new(Rules::default());
        let lanes = (0..n)
            .map(|index| {
                Ok(Lane {
                    env: Env::with_rules(spec.clone(), rules.clone())?,
                    index,
                    episodes: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            lanes,
            run_seed,
            auto_reset: true,
        })
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn env(&self, lane: usize) -> &Env {
        &self.lanes[lane].env
    }

    pub fn set_stats_log(&mut self, log: Option<StatsLog>) {
        for lane in &mut self.lanes {
            lane.env.set_stats_log(log.clone());
        }
    }

    fn reset_lane(lane: &mut Lane, run_seed: u64) -> Result<Observation> {
        let seed = episode_seed(run_seed, lane.index, lane.episodes);
        lane.episodes += 1;
        lane.env.reset(seed)
    }

    pub fn reset_all(&mut self) -> Result<Vec<Observation>> {
        let run_seed = self.run_seed;
        self.lanes
            .par_iter_mut()
            .map(|lane| Self::reset_lane(lane, run_seed))
            .collect()
    }

    /// Steps every lane; equivalent to stepping each lane in order.
    pub fn step_batch(&mut self, actions: &[Action]) -> Result<Vec<StepResult>> {
        if actions.len() != self.lanes.len() {
            return Err(CoreError::Contract(format!(
                "{} actions for {} lanes",
                actions.len(),
                self.lanes.len()
            )));
        }
        let (run_seed, auto_reset) = (self.run_seed, self.auto_reset);
        self.lanes
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(lane, action)| {
                let mut result = lane.env.step(*action)?;
                if result.done && auto_reset {
                    result.observation = Self::reset_lane(lane, run_seed)?;
                    result.info.reset = true;
                }
                Ok(result)
            })
            .collect()
    }

    /// Combined run ledger over all lanes.
    pub fn ledger(&self) -> AchievementLedger {
        self.lanes
            .iter()
            .fold(AchievementLedger::new(), |acc, lane| acc.merge(lane.env.ledger()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::Material;

    #[test]
    fn stats_line_json_shape() {
        let mut line = StatsLine {
            length: 12,
            reward: 1.5,
            achievements: [0; Achievement::COUNT],
        };
        line.achievements[Achievement::CollectWood.index()] = 1;
        let json = line.to_json();
        let obj = json.as_object().unwrap();
        assert_eq!(obj.len(), 24);
        assert_eq!(obj["achievement_collect_wood"], 1);
        assert_eq!(StatsLine::from_json(&json).unwrap(), line);
    }

    #[test]
    fn step_after_done_is_error() {
        let mut env = Env::new(EnvSpec::mini(8, 4, 3)).unwrap();
        assert!(env.step(Action::Noop).is_err());
        env.reset(1).unwrap();
        for _ in 0..3 {
            env.step(Action::Noop).unwrap();
        }
        assert!(env.is_done());
        assert!(env.step(Action::Noop).is_err());
    }

    #[test]
    fn mini_world_wood_reward() {
        let mut env = Env::new(EnvSpec::mini(8, 20, 200)).unwrap();
        env.reset(4).unwrap();
        let state = env.state_mut().unwrap();
        let (x, y) = state.player.pos;
        state.map.set((x, y + 1), Material::Tree);
        let r = env.step(Action::Do).unwrap();
        assert_eq!(r.reward, 1.0);
        assert!(r.info.unlocked.contains(Achievement::CollectWood));
        assert_eq!(env.step(Action::Do).unwrap().reward, 0.0);
    }
}

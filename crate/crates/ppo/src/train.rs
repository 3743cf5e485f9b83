use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use crafter_agents::{checkpoint, AgentConfig, Policy, RecurrentState};
use crafter_core::rng::split_seed;
use crafter_core::{Action, EnvSpec, Observation, StatsLine, StatsLog, VecEnv};
use crafter_nnet::{Adam, AdamConfig, ParamStore, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{ActionMode, PolicyActor};
use crate::buffer::RolloutBuffer;
use crate::config::PpoConfig;
use crate::dist;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport};
use crate::update::{ppo_update, UpdateStats};

/// One collection-plus-update cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub steps: u64,
    #[serde(flatten)]
    pub update: UpdateStats,
    pub steps_per_second: f64,
    pub episodes: usize,
    pub mean_episode_reward: Option<f64>,
    pub mean_episode_length: Option<f64>,
    pub eval_score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
    pub evaluations: Vec<(u64, EvalReport)>,
    /// Every finished training episode.
    #[serde(skip)]
    pub episodes: Vec<StatsLine>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where checkpoints, the report stream and stats logs go.
    pub out_dir: Option<PathBuf>,
    /// Evaluation environment; defaults to the training one.
    pub eval_spec: Option<EnvSpec>,
}

pub struct TrainOutcome<T> {
    pub policy: Policy,
    pub store: ParamStore<T>,
    pub report: TrainReport,
}

/// Sub-seeds of a run.
pub fn run_seeds(seed: u64) -> (u64, u64, u64, u64) {
    (split_seed(seed, 1), split_seed(seed, 2), split_seed(seed, 3), split_seed(seed, 4))
}

/// Steps all lanes of a vectorized environment under a policy.
pub struct Collector<T> {
    pub venv: VecEnv,
    obs: Vec<Observation>,
    starts: Vec<bool>,
    state: Option<RecurrentState<T>>,
    rng: ChaCha8Rng,
    pub finished: Vec<StatsLine>,
}

impl<T: Scalar> Collector<T> {
    pub fn new(spec: &EnvSpec, lanes: usize, env_seed: u64, sample_seed: u64, policy: &Policy) -> Result<Self> {
        let mut venv = VecEnv::new(spec.clone(), lanes, env_seed)?;
        let obs = venv.reset_all()?;
        Ok(Self {
            venv,
            obs,
            starts: vec![true; lanes],
            state: policy.initial_state(lanes),
            rng: ChaCha8Rng::seed_from_u64(sample_seed),
            finished: Vec::new(),
        })
    }

    /// Fills `buffer` and computes its advantages.
    pub fn collect(
        &mut self,
        policy: &Policy,
        store: &ParamStore<T>,
        buffer: &mut RolloutBuffer<T>,
        config: &PpoConfig,
    ) -> Result<()> {
        buffer.clear();
        let n = self.venv.len();
        while !buffer.is_full() {
            let out = policy.forward(store, &self.obs, self.state.as_ref())?;
            let mut actions = Vec::with_capacity(n);
            let mut log_probs = Vec::with_capacity(n);
            for i in 0..n {
                let row = &out.logits.data()[i * crafter_agents::N_ACTIONS..(i + 1) * crafter_agents::N_ACTIONS];
                let (a, lp) = dist::sample(row, &mut self.rng);
                actions.push(a);
                log_probs.push(lp);
            }
            let env_actions: Vec<Action> = actions.iter().map(|a| Action::ALL[*a]).collect();
            let results = self.venv.step_batch(&env_actions)?;
            let rewards: Vec<T> = results.iter().map(|r| T::c(r.reward)).collect();
            let dones: Vec<bool> = results.iter().map(|r| r.done).collect();
            let prev_obs = std::mem::replace(&mut self.obs, results.iter().map(|r| r.observation.clone()).collect());
            buffer.push(
                prev_obs,
                &actions,
                &log_probs,
                out.values.data(),
                &rewards,
                &dones,
                &self.starts,
                self.state.clone(),
            )?;
            for r in results {
                if let Some(line) = r.info.episode {
                    self.finished.push(line);
                }
            }
            self.state = out.state;
            if let Some(s) = &mut self.state {
                s.reset_lanes(&dones);
            }
            self.starts = dones;
        }
        let tail = policy.forward(store, &self.obs, self.state.as_ref())?;
        buffer.finish(tail.values.data(), config.gamma, config.gae_lambda)?;
        Ok(())
    }
}

/// Trains from fresh parameters until the step budget is spent.
pub fn train<T: Scalar>(
    spec: &EnvSpec,
    agent: &AgentConfig,
    config: &PpoConfig,
    seed: u64,
    options: &TrainOptions,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    spec.validate()?;
    let (param_seed, env_seed, sample_seed, shuffle_seed) = run_seeds(seed);
    let (policy, mut store) = Policy::init::<T>(agent, param_seed)?;
    let mut report = TrainReport::default();
    if config.total_steps == 0 {
        if let Some(dir) = &options.out_dir {
            checkpoint::save(&dir.join("final.ckpt"), agent, &store)?;
        }
        return Ok(TrainOutcome { policy, store, report });
    }
    let mut optimizer = Adam::new(
        &store,
        AdamConfig {
            lr: config.learning_rate,
            eps: config.adam_eps,
            ..AdamConfig::default()
        },
    );
    let mut collector = Collector::<T>::new(spec, config.n_lanes, env_seed, sample_seed, &policy)?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut buffer = RolloutBuffer::new(config.n_lanes, config.steps_per_lane());
    let mut report_file = None;
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir)?;
        collector.venv.set_stats_log(Some(StatsLog::open(&dir.join("train_stats.jsonl"))?));
        report_file = Some(std::fs::File::create(dir.join("train_report.jsonl"))?);
    }
    let eval_spec = options.eval_spec.clone().unwrap_or_else(|| spec.clone());
    let mut steps = 0u64;
    let mut next_eval = config.eval_interval;
    let mut next_ckpt = config.checkpoint_interval;
    let mut iteration = 0;
    while steps < config.total_steps {
        let started = Instant::now();
        collector.collect(&policy, &store, &mut buffer, config)?;
        let update = ppo_update(&policy, &mut store, &mut optimizer, &buffer, config, iteration, &mut shuffle)?;
        steps += buffer.len() as u64;
        let elapsed = started.elapsed().as_secs_f64();
        let finished = std::mem::take(&mut collector.finished);
        let mean = |f: &dyn Fn(&StatsLine) -> f64| {
            (!finished.is_empty()).then(|| finished.iter().map(f).sum::<f64>() / finished.len() as f64)
        };
        let mut record = IterationRecord {
            iteration,
            steps,
            update,
            steps_per_second: buffer.len() as f64 / elapsed.max(1e-9),
            episodes: finished.len(),
            mean_episode_reward: mean(&|l| l.reward),
            mean_episode_length: mean(&|l| l.length as f64),
            eval_score: None,
        };
        report.episodes.extend(finished);
        if config.eval_interval > 0 && (steps >= next_eval || steps >= config.total_steps) {
            let mut actor = PolicyActor::new(&policy, &store, ActionMode::Sample, split_seed(seed, 5 + iteration as u64));
            let log = match &options.out_dir {
                Some(dir) => Some(StatsLog::open(&dir.join("eval_stats.jsonl"))?),
                None => None,
            };
            let eval = evaluate(&mut actor, &eval_spec, config.eval_episodes, split_seed(seed, 0xE7A1), log)?;
            record.eval_score = Some(eval.score);
            report.evaluations.push((steps, eval));
            while next_eval <= steps {
                next_eval += config.eval_interval;
            }
        }
        if let Some(dir) = &options.out_dir {
            if config.checkpoint_interval > 0 && steps >= next_ckpt {
                checkpoint::save(&dir.join(format!("checkpoint_{steps}.ckpt")), agent, &store)?;
                while next_ckpt <= steps {
                    next_ckpt += config.checkpoint_interval;
                }
            }
        }
        if let Some(f) = &mut report_file {
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
        }
        on_iteration(&record);
        report.iterations.push(record);
        iteration += 1;
    }
    if let Some(dir) = &options.out_dir {
        checkpoint::save(&dir.join("final.ckpt"), agent, &store)?;
    }
    Ok(TrainOutcome { policy, store, report })
}

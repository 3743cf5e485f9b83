use std::sync::Arc;

use crafter_core::env::{episode_seed, ledger_from_stats};
use crafter_core::scoring::score;
use crafter_core::{success_rates, Achievement, Env, EnvSpec, Observation, Rules, StatsLine, StatsLog};
use serde::{Deserialize, Serialize};

use crate::actor::Actor;
use crate::error::{PpoError, Result};

/// Episodes run concurrently during evaluation.
pub const EVAL_LANES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub score: f64,
    /// Success rate in percent per achievement, roster order.
    pub rates: Vec<f64>,
    pub mean_reward: f64,
    pub mean_length: f64,
}

impl EvalReport {
    pub fn rate(&self, a: Achievement) -> f64 {
        self.rates[a.index()]
    }

    pub fn from_stats(lines: &[StatsLine]) -> Result<Self> {
        let ledger = ledger_from_stats(lines);
        let input = success_rates(&ledger)?;
        let n = lines.len() as f64;
        Ok(Self {
            episodes: lines.len(),
            score: score(&input),
            rates: Achievement::ALL.iter().map(|a| input.rate(*a)).collect(),
            mean_reward: lines.iter().map(|l| l.reward).sum::<f64>() / n,
            mean_length: lines.iter().map(|l| l.length as f64).sum::<f64>() / n,
        })
    }
}

/// Runs `n_episodes` seeded episodes on `spec`. Episode `i` uses the seed
/// derived from `(seed, i)`, so results do not depend on batching.
pub fn evaluate(
    actor: &mut dyn Actor,
    spec: &EnvSpec,
    n_episodes: usize,
    seed: u64,
    stats: Option<StatsLog>,
) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(PpoError::Domain("evaluation needs at least one episode".into()));
    }
    let rules = Arc::new(Rules::default());
    let mut lines = Vec::with_capacity(n_episodes);
    let mut next = 0;
    while next < n_episodes {
        let wave = EVAL_LANES.min(n_episodes - next);
        let mut envs = Vec::with_capacity(wave);
        let mut obs: Vec<Observation> = Vec::with_capacity(wave);
        for i in 0..wave {
            let mut env = Env::with_rules(spec.clone(), rules.clone())?;
            env.set_stats_log(stats.clone());
            obs.push(env.reset(episode_seed(seed, next + i, 0))?);
            envs.push(env);
        }
        actor.begin(wave);
        let mut active: Vec<usize> = (0..wave).collect();
        let mut finished: Vec<Option<StatsLine>> = vec![None; wave];
        while !active.is_empty() {
            let frames: Vec<Observation> = active.iter().map(|&l| obs[l].clone()).collect();
            let actions = actor.act(&active, &frames)?;
            for (&lane, action) in active.iter().zip(actions) {
                let r = envs[lane].step(action)?;
                obs[lane] = r.observation;
                if r.done {
                    finished[lane] = r.info.episode;
                }
            }
            active.retain(|&l| !envs[l].is_done());
        }
        lines.extend(finished.into_iter().map(|l| l.expect("episode stats on termination")));
        next += wave;
    }
    EvalReport::from_stats(&lines)
}

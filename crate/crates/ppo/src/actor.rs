use crafter_agents::{Policy, RecurrentState};
use crafter_core::{Action, Observation};
use crafter_nnet::{ParamStore, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist;
use crate::error::Result;

/// Chooses actions for a set of lanes. `lanes` lists the active lanes and
/// `observations` their current frames, in the same order.
pub trait Actor {
    /// Called before a batch of `n` fresh episodes.
    fn begin(&mut self, n: usize);
    fn act(&mut self, lanes: &[usize], observations: &[Observation]) -> Result<Vec<Action>>;
}

/// Uniform over the 17 actions.
pub struct RandomActor {
    rng: ChaCha8Rng,
}

impl RandomActor {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Actor for RandomActor {
    fn begin(&mut self, _n: usize) {}

    fn act(&mut self, lanes: &[usize], _observations: &[Observation]) -> Result<Vec<Action>> {
        Ok(lanes
            .iter()
            .map(|_| Action::ALL[self.rng.random_range(0..Action::ALL.len())])
            .collect())
    }
}

/// Actions from a closure of the observation.
pub struct ScriptedActor<F> {
    pub script: F,
}

impl<F: FnMut(usize, &Observation) -> Action> Actor for ScriptedActor<F> {
    fn begin(&mut self, _n: usize) {}

    fn act(&mut self, lanes: &[usize], observations: &[Observation]) -> Result<Vec<Action>> {
        Ok(lanes
            .iter()
            .zip(observations)
            .map(|(l, o)| (self.script)(*l, o))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// A trained policy acting by sampling or by argmax.
pub struct PolicyActor<'a, T: Scalar> {
    pub policy: &'a Policy,
    pub store: &'a ParamStore<T>,
    pub mode: ActionMode,
    rng: ChaCha8Rng,
    state: Option<RecurrentState<T>>,
}

impl<'a, T: Scalar> PolicyActor<'a, T> {
    pub fn new(policy: &'a Policy, store: &'a ParamStore<T>, mode: ActionMode, seed: u64) -> Self {
        Self {
            policy,
            store,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: None,
        }
    }
}

impl<T: Scalar> Actor for PolicyActor<'_, T> {
    fn begin(&mut self, n: usize) {
        self.state = self.policy.initial_state(n);
    }

    fn act(&mut self, lanes: &[usize], observations: &[Observation]) -> Result<Vec<Action>> {
        let part = self.state.as_ref().map(|s| s.select(lanes));
        let out = self.policy.forward(self.store, observations, part.as_ref())?;
        if let (Some(all), Some(next)) = (&mut self.state, &out.state) {
            all.scatter(lanes, next);
        }
        let n = crafter_agents::N_ACTIONS;
        Ok((0..lanes.len())
            .map(|i| {
                let row = &out.logits.data()[i * n..(i + 1) * n];
                let a = match self.mode {
                    ActionMode::Sample => dist::sample(row, &mut self.rng).0,
                    ActionMode::Greedy => dist::argmax(row),
                };
                Action::ALL[a]
            })
            .collect())
    }
}

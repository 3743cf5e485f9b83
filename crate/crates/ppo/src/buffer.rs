use crafter_agents::RecurrentState;
use crafter_core::Observation;
use crafter_nnet::Scalar;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{PpoError, Result};
use crate::gae::compute_gae;

/// Fixed-horizon trajectories of all lanes. Transition `(t, lane)` lives at
/// index `t * lanes + lane`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer<T> {
    lanes: usize,
    horizon: usize,
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<T>,
    pub values: Vec<T>,
    pub rewards: Vec<T>,
    /// The episode ended with this transition.
    pub terminals: Vec<bool>,
    /// This transition is the first of an episode.
    pub starts: Vec<bool>,
    /// Recurrent state fed to the policy at each step, all lanes.
    pub states: Vec<RecurrentState<T>>,
    advantages: Vec<T>,
    returns: Vec<T>,
    ready: bool,
}

/// A contiguous run of one lane's transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sequence {
    pub lane: usize,
    pub start: usize,
    pub len: usize,
}

impl<T: Scalar> RolloutBuffer<T> {
    pub fn new(lanes: usize, horizon: usize) -> Self {
        let cap = lanes * horizon;
        Self {
            lanes,
            horizon,
            observations: Vec::with_capacity(cap),
            actions: Vec::with_capacity(cap),
            log_probs: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            terminals: Vec::with_capacity(cap),
            starts: Vec::with_capacity(cap),
            states: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
            ready: false,
        }
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Filled time steps.
    pub fn steps(&self) -> usize {
        self.actions.len() / self.lanes
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.steps() == self.horizon
    }

    pub fn is_ready(&self) -> bool {
        self.ready
    }

    pub fn clear(&mut self) {
        self.observations.clear();
        self.actions.clear();
        self.log_probs.clear();
        self.values.clear();
        self.rewards.clear();
        self.terminals.clear();
        self.starts.clear();
        self.states.clear();
        self.advantages.clear();
        self.returns.clear();
        self.ready = false;
    }

    /// Appends one time step for every lane.
    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        observations: Vec<Observation>,
        actions: &[usize],
        log_probs: &[T],
        values: &[T],
        rewards: &[T],
        terminals: &[bool],
        starts: &[bool],
        state: Option<RecurrentState<T>>,
    ) -> Result<()> {
        let n = self.lanes;
        if self.is_full() {
            return Err(PpoError::Domain("rollout buffer is full".into()));
        }
        if [observations.len(), actions.len(), log_probs.len(), values.len(), rewards.len(), terminals.len(), starts.len()]
            .iter()
            .any(|l| *l != n)
        {
            return Err(PpoError::Domain(format!("every per-step field needs {n} lanes")));
        }
        self.observations.extend(observations);
        self.actions.extend_from_slice(actions);
        self.log_probs.extend_from_slice(log_probs);
        self.values.extend_from_slice(values);
        self.rewards.extend_from_slice(rewards);
        self.terminals.extend_from_slice(terminals);
        self.starts.extend_from_slice(starts);
        if let Some(s) = state {
            self.states.push(s);
        }
        self.ready = false;
        Ok(())
    }

    /// Computes advantages and returns once collection is complete.
    pub fn finish(&mut self, bootstrap: &[T], gamma: f64, lambda: f64) -> Result<()> {
        if !self.is_full() {
            return Err(PpoError::Domain(format!(
                "rollout has {} of {} steps",
                self.steps(),
                self.horizon
            )));
        }
        if bootstrap.len() != self.lanes {
            return Err(PpoError::Domain("one bootstrap value per lane is required".into()));
        }
        let n = self.len();
        self.advantages = vec![T::zero(); n];
        self.returns = vec![T::zero(); n];
        for lane in 0..self.lanes {
            let idx: Vec<usize> = (0..self.horizon).map(|t| t * self.lanes + lane).collect();
            let r: Vec<T> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<T> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.terminals[i]).collect();
            let (adv, ret) = compute_gae(&r, &v, &d, bootstrap[lane], T::c(gamma), T::c(lambda))?;
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = adv[k];
                self.returns[i] = ret[k];
            }
        }
        self.ready = true;
        Ok(())
    }

    pub fn advantages(&self) -> Result<&[T]> {
        self.ensure_ready()?;
        Ok(&self.advantages)
    }

    pub fn returns(&self) -> Result<&[T]> {
        self.ensure_ready()?;
        Ok(&self.returns)
    }

    fn ensure_ready(&self) -> Result<()> {
        if !self.ready {
            return Err(PpoError::Domain("advantages are only available after a completed collection".into()));
        }
        Ok(())
    }

    /// Shuffled flat minibatches of transition indices.
    pub fn minibatches<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }

    /// Shuffled groups of equal-length lane sequences, about `batch_size`
    /// transitions per group.
    pub fn sequence_batches<R: Rng>(&self, seq_len: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<Sequence>> {
        let mut seqs = Vec::new();
        for lane in 0..self.lanes {
            let mut start = 0;
            while start < self.horizon {
                let len = seq_len.min(self.horizon - start);
                seqs.push(Sequence { lane, start, len });
                start += len;
            }
        }
        seqs.shuffle(rng);
        let per = (batch_size / seq_len.max(1)).max(1);
        let mut out = Vec::new();
        let mut lengths: Vec<usize> = seqs.iter().map(|s| s.len).collect();
        lengths.sort_unstable();
        lengths.dedup();
        for len in lengths.into_iter().rev() {
            let group: Vec<Sequence> = seqs.iter().copied().filter(|s| s.len == len).collect();
            out.extend(group.chunks(per).map(|c| c.to_vec()));
        }
        out
    }

    pub fn index(&self, t: usize, lane: usize) -> usize {
        t * self.lanes + lane
    }
}

/// Share of return variance explained by the value estimates.
pub fn explained_variance<T: Scalar>(values: &[T], returns: &[T]) -> f64 {
    let n = returns.len() as f64;
    if n == 0.0 {
        return f64::NAN;
    }
    let f = |v: &T| v.to_f64().unwrap_or(f64::NAN);
    let mean_r = returns.iter().map(f).sum::<f64>() / n;
    let var_r = returns.iter().map(|r| (f(r) - mean_r).powi(2)).sum::<f64>() / n;
    let resid: Vec<f64> = returns.iter().zip(values).map(|(r, v)| f(r) - f(v)).collect();
    let mean_e = resid.iter().sum::<f64>() / n;
    let var_e = resid.iter().map(|e| (e - mean_e).powi(2)).sum::<f64>() / n;
    if var_r == 0.0 {
        f64::NAN
    } else {
        1.0 - var_e / var_r
    }
}

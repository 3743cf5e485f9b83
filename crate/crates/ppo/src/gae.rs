use crafter_nnet::Scalar;

use crate::error::{PpoError, Result};

/// Generalized advantage estimates and returns for one lane.
/// `terminals[t]` marks that the episode ended after step `t`;
/// `bootstrap` is the value of the state following the last step.
pub fn compute_gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    terminals: &[bool],
    bootstrap: T,
    gamma: T,
    lambda: T,
) -> Result<(Vec<T>, Vec<T>)> {
    let n = rewards.len();
    if values.len() != n || terminals.len() != n {
        return Err(PpoError::Domain(format!(
            "gae inputs disagree in length: {n} rewards, {} values, {} terminals",
            values.len(),
            terminals.len()
        )));
    }
    let unit = T::zero()..=T::one();
    if !unit.contains(&gamma) || !unit.contains(&lambda) {
        return Err(PpoError::Domain("gamma and lambda must lie in [0, 1]".into()));
    }
    let mut adv = vec![T::zero(); n];
    let mut running = T::zero();
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if terminals[t] { T::zero() } else { T::one() };
        let delta = rewards[t] + gamma * next * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| *a + *v).collect();
    Ok((adv, returns))
}

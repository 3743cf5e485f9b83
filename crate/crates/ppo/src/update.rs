use crafter_agents::{observation_batch, Policy, RecurrentState, StateVars, N_ACTIONS};
use crafter_core::Observation;
use crafter_nnet::{Adam, Graph, Grads, ParamStore, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{explained_variance, RolloutBuffer, Sequence};
use crate::config::PpoConfig;
use crate::error::{PpoError, Result};

/// Averages over the minibatches of one update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub explained_variance: f64,
    pub minibatches: usize,
}

/// Per-minibatch targets.
pub struct Targets<T> {
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

/// Zero mean, unit (population) standard deviation. Batches of one are left
/// unchanged.
pub fn normalize_advantages<T: Scalar>(adv: &[T]) -> Vec<T> {
    if adv.len() < 2 {
        return adv.to_vec();
    }
    let n = T::c(adv.len() as f64);
    let mean = adv.iter().copied().sum::<T>() / n;
    let var = adv.iter().map(|a| (*a - mean) * (*a - mean)).sum::<T>() / n;
    let std = var.sqrt() + T::c(1e-8);
    adv.iter().map(|a| (*a - mean) / std).collect()
}

/// Loss nodes of the clipped objective.
pub struct LossVars {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub ratio: Var,
}

/// Builds `policy_loss - ent_coef * entropy + vf_coef * value_loss` from
/// `logits [B, 17]` and `values [B]`.
pub fn ppo_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    logits: Var,
    values: Var,
    targets: &Targets<T>,
    config: &PpoConfig,
) -> Result<LossVars> {
    let b = targets.actions.len();
    let lp = g.log_softmax(logits);
    let picked = g.gather(lp, &targets.actions)?;
    let old = g.input(Tensor::new(&[b], targets.old_log_probs.clone())?);
    let diff = g.sub(picked, old)?;
    let ratio = g.exp(diff);
    let adv = g.input(Tensor::new(&[b], normalize_advantages(&targets.advantages))?);
    let unclipped = g.mul(ratio, adv)?;
    let clipped_ratio = g.clamp(ratio, 1.0 - config.clip_range, 1.0 + config.clip_range);
    let clipped = g.mul(clipped_ratio, adv)?;
    let surrogate = g.minimum(unclipped, clipped)?;
    let surrogate = g.mean(surrogate);
    let policy = g.scale(surrogate, -1.0);

    let returns = g.input(Tensor::new(&[b], targets.returns.clone())?);
    let err = g.sub(values, returns)?;
    let sq = g.square(err);
    let value = g.mean(sq);

    let p = g.exp(lp);
    let plogp = g.mul(p, lp)?;
    let neg_entropy = g.sum_last(plogp);
    let neg_entropy = g.mean(neg_entropy);
    let entropy = g.scale(neg_entropy, -1.0);

    let ent_term = g.scale(neg_entropy, config.ent_coef);
    let vf_term = g.scale(value, config.vf_coef);
    let total = g.add(policy, ent_term)?;
    let total = g.add(total, vf_term)?;
    Ok(LossVars {
        total,
        policy,
        value,
        entropy,
        ratio,
    })
}

fn f<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Minibatch forward for feedforward agents.
fn forward_flat<T: Scalar>(
    g: &mut Graph<'_, T>,
    policy: &Policy,
    observations: &[Observation],
) -> Result<(Var, Var)> {
    let obs = g.input(observation_batch(observations));
    let out = policy.forward_graph(g, obs, None)?;
    Ok((out.logits, out.value))
}

/// Unrolls each sequence from its stored state, resetting at episode starts.
/// Outputs are ordered sequence-major.
fn forward_sequences<T: Scalar>(
    g: &mut Graph<'_, T>,
    policy: &Policy,
    buffer: &RolloutBuffer<T>,
    seqs: &[Sequence],
) -> Result<(Var, Var)> {
    let s = seqs.len();
    let len = seqs[0].len;
    let hidden = policy.config().lstm_hidden;
    // Stored states are per time step for all lanes; pick each sequence's row.
    let mut init: Option<RecurrentState<T>> = None;
    for (i, q) in seqs.iter().enumerate() {
        let row = buffer.states[q.start].select(&[q.lane]);
        match &mut init {
            None => {
                let mut all = row.select(&vec![0; s]);
                all.scatter(&[i], &row);
                init = Some(all);
            }
            Some(all) => all.scatter(&[i], &row),
        }
    }
    let init = init.ok_or_else(|| PpoError::Domain("recurrent update without stored states".into()))?;
    let mut state = StateVars::input(g, &init);
    let mut logits_seq: Option<Var> = None;
    let mut values_seq: Option<Var> = None;
    for t in 0..len {
        if t > 0 {
            let keep: Vec<T> = seqs
                .iter()
                .flat_map(|q| {
                    let start = buffer.starts[buffer.index(q.start + t, q.lane)];
                    std::iter::repeat_n(if start { T::zero() } else { T::one() }, hidden)
                })
                .collect();
            let keep = g.input(Tensor::new(&[s, hidden], keep)?);
            state = state.masked(g, keep)?;
        }
        let obs: Vec<Observation> = seqs
            .iter()
            .map(|q| buffer.observations[buffer.index(q.start + t, q.lane)].clone())
            .collect();
        let obs = g.input(observation_batch(&obs));
        let out = policy.forward_graph(g, obs, Some(state))?;
        state = out.state.expect("recurrent output");
        let l = g.reshape(out.logits, &[s, 1, N_ACTIONS])?;
        let v = g.reshape(out.value, &[s, 1, 1])?;
        logits_seq = Some(match logits_seq {
            None => l,
            Some(prev) => g.concat_seq(prev, l)?,
        });
        values_seq = Some(match values_seq {
            None => v,
            Some(prev) => g.concat_seq(prev, v)?,
        });
    }
    let logits = g.reshape(logits_seq.expect("len > 0"), &[s * len, N_ACTIONS])?;
    let values = g.reshape(values_seq.expect("len > 0"), &[s * len])?;
    Ok((logits, values))
}

/// Runs `n_epochs` passes of clipped-objective minibatch updates.
pub fn ppo_update<T: Scalar, R: Rng>(
    policy: &Policy,
    store: &mut ParamStore<T>,
    optimizer: &mut Adam<T>,
    buffer: &RolloutBuffer<T>,
    config: &PpoConfig,
    update_index: usize,
    rng: &mut R,
) -> Result<UpdateStats> {
    let advantages = buffer.advantages()?.to_vec();
    let returns = buffer.returns()?.to_vec();
    let recurrent = policy.architecture().is_recurrent();
    let mut stats = UpdateStats {
        explained_variance: explained_variance(&buffer.values, &returns),
        ..UpdateStats::default()
    };
    let max_norm = T::c(config.max_grad_norm);
    for _ in 0..config.n_epochs {
        let batches: Vec<(Vec<usize>, Vec<Sequence>)> = if recurrent {
            buffer
                .sequence_batches(config.seq_len, config.batch_size, rng)
                .into_iter()
                .map(|seqs| {
                    let idx = seqs
                        .iter()
                        .flat_map(|q| (0..q.len).map(move |t| buffer.index(q.start + t, q.lane)))
                        .collect();
                    (idx, seqs)
                })
                .collect()
        } else {
            buffer
                .minibatches(config.batch_size, rng)
                .into_iter()
                .map(|idx| (idx, Vec::new()))
                .collect()
        };
        for (idx, seqs) in batches {
            let targets = Targets {
                actions: idx.iter().map(|&i| buffer.actions[i]).collect(),
                old_log_probs: idx.iter().map(|&i| buffer.log_probs[i]).collect(),
                advantages: idx.iter().map(|&i| advantages[i]).collect(),
                returns: idx.iter().map(|&i| returns[i]).collect(),
            };
            let (grads, mb) = {
                let mut g = Graph::with_params(&*store);
                let (logits, values) = if recurrent {
                    forward_sequences(&mut g, policy, buffer, &seqs)?
                } else {
                    let obs: Vec<Observation> = idx.iter().map(|&i| buffer.observations[i].clone()).collect();
                    forward_flat(&mut g, policy, &obs)?
                };
                let loss = ppo_loss(&mut g, logits, values, &targets, config)?;
                let total = f(g.value(loss.total).item());
                if !total.is_finite() {
                    return Err(PpoError::NonFinite {
                        what: "loss".into(),
                        update: update_index,
                        minibatch: stats.minibatches,
                        detail: format!(
                            "policy {} value {} entropy {}",
                            f(g.value(loss.policy).item()),
                            f(g.value(loss.value).item()),
                            f(g.value(loss.entropy).item())
                        ),
                    });
                }
                let ratio = g.value(loss.ratio).data();
                let n = ratio.len() as f64;
                let clip = ratio.iter().filter(|r| (f(**r) - 1.0).abs() > config.clip_range).count() as f64 / n;
                // Low-variance KL estimate (r - 1) - ln r.
                let kl = ratio.iter().map(|r| (f(*r) - 1.0) - f(*r).ln()).sum::<f64>() / n;
                let grads = g.backward(loss.total)?;
                let grads = g.param_grads(&grads, store);
                let mb = (f(g.value(loss.policy).item()), f(g.value(loss.value).item()), f(g.value(loss.entropy).item()), clip, kl);
                (grads, mb)
            };
            let mut grads: Grads<T> = grads;
            if !grads.is_finite() {
                return Err(PpoError::NonFinite {
                    what: "gradient".into(),
                    update: update_index,
                    minibatch: stats.minibatches,
                    detail: format!("loss terms {mb:?}"),
                });
            }
            let norm = grads.clip_global_norm(max_norm);
            optimizer.step(store, &grads);
            stats.policy_loss += mb.0;
            stats.value_loss += mb.1;
            stats.entropy += mb.2;
            stats.clip_fraction += mb.3;
            stats.approx_kl += mb.4;
            stats.grad_norm += f(norm);
            stats.minibatches += 1;
        }
    }
    let n = stats.minibatches.max(1) as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.clip_fraction /= n;
    stats.approx_kl /= n;
    stats.grad_norm /= n;
    Ok(stats)
}

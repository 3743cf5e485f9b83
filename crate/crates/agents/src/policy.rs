use crafter_core::Observation;
use crafter_nnet::{
    sinusoidal_pe, Attention, Conv2d, Graph, LayerNorm, Linear, LstmCell, ParamId, ParamPlan, ParamStore, ResidualMlp,
    Scalar, SoftmaxAxis, Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionOutput, AttentionQuery, PatchGeometry};
use crate::config::{AgentConfig, Architecture};
use crate::error::{AgentError, Result};
use crate::{IMAGE, N_ACTIONS};

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
const POLICY_GAIN: f64 = 0.01;

/// Parameter list of an architecture, available without allocating.
pub fn plan(config: &AgentConfig) -> Result<ParamPlan> {
    config.validate()?;
    let arch = config.architecture;
    let mut p = ParamPlan::new();
    let feature_in = if arch.uses_spcnn() {
        let mut c_in = 3;
        for i in 0..config.spcnn_depth {
            Conv2d::plan(&mut p, &format!("spcnn.{i}"), c_in, config.spcnn_channels, config.spcnn_kernel, RELU_GAIN);
            c_in = config.spcnn_channels;
        }
        config.spcnn_channels * IMAGE * IMAGE
    } else {
        let mut c_in = 3;
        for (i, l) in config.cnn_layers.iter().enumerate() {
            Conv2d::plan(&mut p, &format!("cnn.{i}"), c_in, l.channels, l.kernel, RELU_GAIN);
            c_in = l.channels;
        }
        c_in * config.cnn_output_side().pow(2)
    };
    let head_in = match arch {
        Architecture::PpoCnn | Architecture::PpoSpcnn => {
            Linear::plan(&mut p, "fc", feature_in, config.feature_dim, RELU_GAIN);
            config.feature_dim
        }
        Architecture::LstmCnn | Architecture::LstmSpcnn => {
            Linear::plan(&mut p, "fc", feature_in, config.feature_dim, RELU_GAIN);
            LstmCell::plan(&mut p, "actor.lstm", config.feature_dim, config.lstm_hidden);
            if arch == Architecture::LstmCnn {
                LstmCell::plan(&mut p, "critic.lstm", config.feature_dim, config.lstm_hidden);
            } else {
                Linear::plan(&mut p, "critic.fc", config.feature_dim, config.lstm_hidden, 1.0);
            }
            config.lstm_hidden
        }
        Architecture::OcSa | Architecture::OcCa => {
            let e = config.embed_dim;
            let token_in = config.spcnn_channels * config.patch_size * config.patch_size;
            if arch == Architecture::OcSa {
                p.push("cls", &[1, e], crafter_nnet::Init::Gaussian(1.0));
            } else {
                p.push("slots", &[config.n_slots, e], crafter_nnet::Init::Gaussian(1.0));
            }
            Linear::plan(&mut p, "proj", token_in, e, 1.0);
            for i in 0..config.attention_layers {
                Attention::plan(&mut p, &format!("attn.{i}"), e);
                if config.use_layernorm {
                    LayerNorm::plan(&mut p, &format!("ln.{i}"), e);
                }
                if config.use_residual_mlp {
                    ResidualMlp::plan(&mut p, &format!("mlp.{i}"), e, config.mlp_hidden);
                }
            }
            e
        }
    };
    Linear::plan(&mut p, "pi", head_in, N_ACTIONS, POLICY_GAIN);
    Linear::plan(&mut p, "v", head_in, 1, 1.0);
    Ok(p)
}

pub fn count_params(config: &AgentConfig) -> Result<usize> {
    Ok(plan(config)?.num_params())
}

/// Per-lane LSTM state, `[n, hidden]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState<T> {
    pub actor: (Tensor<T>, Tensor<T>),
    pub critic: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> RecurrentState<T> {
    pub fn zeros(config: &AgentConfig, n: usize) -> Option<Self> {
        let z = || Tensor::zeros(&[n, config.lstm_hidden]);
        match config.architecture {
            Architecture::LstmCnn => Some(Self {
                actor: (z(), z()),
                critic: Some((z(), z())),
            }),
            Architecture::LstmSpcnn => Some(Self {
                actor: (z(), z()),
                critic: None,
            }),
            _ => None,
        }
    }

    pub fn lanes(&self) -> usize {
        self.actor.0.shape()[0]
    }

    /// Zeroes the rows of lanes whose episode just ended.
    pub fn reset_lanes(&mut self, done: &[bool]) {
        let clear = |t: &mut Tensor<T>| {
            let d = t.last_dim();
            for (lane, _) in done.iter().enumerate().filter(|(_, d)| **d) {
                t.data_mut()[lane * d..(lane + 1) * d].fill(T::zero());
            }
        };
        clear(&mut self.actor.0);
        clear(&mut self.actor.1);
        if let Some((h, c)) = &mut self.critic {
            clear(h);
            clear(c);
        }
    }

    /// Writes the rows of `part` back to the given lanes.
    pub fn scatter(&mut self, lanes: &[usize], part: &Self) {
        let put = |dst: &mut Tensor<T>, src: &Tensor<T>| {
            let d = dst.last_dim();
            for (i, &l) in lanes.iter().enumerate() {
                dst.data_mut()[l * d..(l + 1) * d].copy_from_slice(src.row(i));
            }
        };
        put(&mut self.actor.0, &part.actor.0);
        put(&mut self.actor.1, &part.actor.1);
        if let (Some((h, c)), Some((ph, pc))) = (&mut self.critic, &part.critic) {
            put(h, ph);
            put(c, pc);
        }
    }

    /// Rows of the given lanes, in order.
    pub fn select(&self, lanes: &[usize]) -> Self {
        let pick = |t: &Tensor<T>| {
            let d = t.last_dim();
            let mut out = Vec::with_capacity(lanes.len() * d);
            for &l in lanes {
                out.extend_from_slice(t.row(l));
            }
            Tensor::new(&[lanes.len(), d], out).expect("row count")
        };
        Self {
            actor: (pick(&self.actor.0), pick(&self.actor.1)),
            critic: self.critic.as_ref().map(|(h, c)| (pick(h), pick(c))),
        }
    }
}

/// LSTM state as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct StateVars {
    pub actor: (Var, Var),
    pub critic: Option<(Var, Var)>,
}

impl StateVars {
    pub fn input<T: Scalar>(g: &mut Graph<'_, T>, state: &RecurrentState<T>) -> Self {
        Self {
            actor: (g.input(state.actor.0.clone()), g.input(state.actor.1.clone())),
            critic: state
                .critic
                .as_ref()
                .map(|(h, c)| (g.input(h.clone()), g.input(c.clone()))),
        }
    }

    pub fn read<T: Scalar>(&self, g: &Graph<'_, T>) -> RecurrentState<T> {
        RecurrentState {
            actor: (g.value(self.actor.0).clone(), g.value(self.actor.1).clone()),
            critic: self.critic.map(|(h, c)| (g.value(h).clone(), g.value(c).clone())),
        }
    }

    /// Multiplies every state tensor by a `[n, hidden]` keep-mask.
    pub fn masked<T: Scalar>(&self, g: &mut Graph<'_, T>, keep: Var) -> Result<Self> {
        let mut m = |v: Var| g.mul(v, keep);
        Ok(Self {
            actor: (m(self.actor.0)?, m(self.actor.1)?),
            critic: match self.critic {
                Some((h, c)) => Some((m(h)?, m(c)?)),
                None => None,
            },
        })
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct GraphOutput {
    /// `[n, 17]`
    pub logits: Var,
    /// `[n]`
    pub value: Var,
    pub state: Option<StateVars>,
    /// Node of the final attention layer; its weights are its first aux tensor.
    pub attention: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct PolicyOutput<T> {
    pub logits: Tensor<T>,
    pub values: Tensor<T>,
    pub state: Option<RecurrentState<T>>,
    pub attention: Option<AttentionOutput>,
}

/// A policy network bound to the parameter names of its plan.
#[derive(Debug, Clone)]
pub struct Policy {
    config: AgentConfig,
    convs: Vec<Conv2d>,
    fc: Option<Linear>,
    actor_lstm: Option<LstmCell>,
    critic_lstm: Option<LstmCell>,
    critic_fc: Option<Linear>,
    proj: Option<Linear>,
    cls: Option<ParamId>,
    slots: Option<ParamId>,
    attn: Vec<Attention>,
    ln: Vec<Option<LayerNorm>>,
    mlp: Vec<Option<ResidualMlp>>,
    pi: Linear,
    v: Linear,
}

impl Policy {
    /// Fresh parameters drawn from `seed`.
    pub fn init<T: Scalar>(config: &AgentConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = plan(config)?.materialize(&mut rng);
        let policy = Self::bind(config, &store)?;
        Ok((policy, store))
    }

    /// Binds to an existing store, checking names and shapes.
    pub fn bind<T: Scalar>(config: &AgentConfig, store: &ParamStore<T>) -> Result<Self> {
        plan(config)?
            .check(store)
            .map_err(|e| AgentError::Config(format!("parameters do not match {}: {e}", config.architecture)))?;
        let arch = config.architecture;
        let convs = if arch.uses_spcnn() {
            let pad = config.spcnn_kernel / 2;
            (0..config.spcnn_depth)
                .map(|i| Conv2d::bind(store, &format!("spcnn.{i}"), 1, pad))
                .collect::<std::result::Result<Vec<_>, _>>()?
        } else {
            config
                .cnn_layers
                .iter()
                .enumerate()
                .map(|(i, l)| Conv2d::bind(store, &format!("cnn.{i}"), l.stride, 0))
                .collect::<std::result::Result<Vec<_>, _>>()?
        };
        let opt_linear = |name: &str| store.find(&format!("{name}.w")).map(|_| Linear::bind(store, name)).transpose();
        let opt_lstm = |name: &str| store.find(&format!("{name}.w")).map(|_| LstmCell::bind(store, name)).transpose();
        let axis = if config.use_slot_competition {
            SoftmaxAxis::Queries
        } else {
            SoftmaxAxis::Keys
        };
        let mut attn = Vec::new();
        let mut ln = Vec::new();
        let mut mlp = Vec::new();
        if arch.is_object_centric() {
            for i in 0..config.attention_layers {
                attn.push(Attention::bind(store, &format!("attn.{i}"), config.n_heads, axis)?);
                ln.push(config.use_layernorm.then(|| LayerNorm::bind(store, &format!("ln.{i}"))).transpose()?);
                mlp.push(config.use_residual_mlp.then(|| ResidualMlp::bind(store, &format!("mlp.{i}"))).transpose()?);
            }
        }
        Ok(Self {
            config: config.clone(),
            convs,
            fc: opt_linear("fc")?,
            actor_lstm: opt_lstm("actor.lstm")?,
            critic_lstm: opt_lstm("critic.lstm")?,
            critic_fc: opt_linear("critic.fc")?,
            proj: opt_linear("proj")?,
            cls: store.find("cls"),
            slots: store.find("slots"),
            attn,
            ln,
            mlp,
            pi: Linear::bind(store, "pi")?,
            v: Linear::bind(store, "v")?,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn initial_state<T: Scalar>(&self, n: usize) -> Option<RecurrentState<T>> {
        RecurrentState::zeros(&self.config, n)
    }

    fn trunk<T: Scalar>(&self, g: &mut Graph<'_, T>, obs: Var) -> Result<Var> {
        let mut h = obs;
        for conv in &self.convs {
            h = conv.forward(g, h)?;
            h = g.relu(h);
        }
        Ok(h)
    }

    fn flat_features<T: Scalar>(&self, g: &mut Graph<'_, T>, maps: Var) -> Result<Var> {
        let n = g.shape(maps)[0];
        let per = g.value(maps).len() / n;
        let flat = g.reshape(maps, &[n, per])?;
        let fc = self.fc.as_ref().expect("feature layer bound");
        let h = fc.forward(g, flat)?;
        Ok(g.relu(h))
    }

    fn post_attention<T: Scalar>(&self, g: &mut Graph<'_, T>, i: usize, mut x: Var) -> Result<Var> {
        if let Some(ln) = &self.ln[i] {
            x = ln.forward(g, x)?;
        }
        if let Some(mlp) = &self.mlp[i] {
            x = mlp.forward(g, x)?;
        }
        Ok(x)
    }

    /// Patch tokens `[n, k, embed]`, with positional embeddings if enabled.
    fn tokens<T: Scalar>(&self, g: &mut Graph<'_, T>, maps: Var) -> Result<Var> {
        let c = &self.config;
        let patches = g.patches(maps, c.patch_size, c.stride)?;
        let proj = self.proj.as_ref().expect("projection bound");
        let mut tokens = proj.forward(g, patches)?;
        if c.use_positional_embeddings {
            let pe = g.input(sinusoidal_pe::<T>(c.n_patches(), c.embed_dim)?);
            tokens = g.add_broadcast(tokens, pe)?;
        }
        Ok(tokens)
    }

    /// Forward pass on a graph. `obs` is `[n, 3, 64, 64]`; recurrent
    /// architectures need `state`.
    pub fn forward_graph<T: Scalar>(&self, g: &mut Graph<'_, T>, obs: Var, state: Option<StateVars>) -> Result<GraphOutput> {
        let shape = g.shape(obs).to_vec();
        if shape.len() != 4 || shape[1..] != [3, IMAGE, IMAGE] {
            return Err(AgentError::Config(format!("observation batch must be [n, 3, 64, 64], got {shape:?}")));
        }
        let n = shape[0];
        let arch = self.config.architecture;
        let maps = self.trunk(g, obs)?;
        let (actor_in, critic_in, new_state, attention) = match arch {
            Architecture::PpoCnn | Architecture::PpoSpcnn => {
                let f = self.flat_features(g, maps)?;
                (f, f, None, None)
            }
            Architecture::LstmCnn | Architecture::LstmSpcnn => {
                let st = state.ok_or_else(|| AgentError::Config(format!("{arch} needs a recurrent state")))?;
                let f = self.flat_features(g, maps)?;
                let actor = self.actor_lstm.as_ref().expect("actor lstm bound");
                let (ah, ac) = actor.forward(g, f, st.actor.0, st.actor.1)?;
                let (critic_in, critic_state) = match (&self.critic_lstm, &self.critic_fc, st.critic) {
                    (Some(cell), _, Some((h, c))) => {
                        let (ch, cc) = cell.forward(g, f, h, c)?;
                        (ch, Some((ch, cc)))
                    }
                    (None, Some(fc), _) => (fc.forward(g, f)?, None),
                    _ => return Err(AgentError::Config("recurrent state does not match critic".into())),
                };
                let next = StateVars {
                    actor: (ah, ac),
                    critic: critic_state,
                };
                (ah, critic_in, Some(next), None)
            }
            Architecture::OcSa => {
                let tokens = self.tokens(g, maps)?;
                let k = g.shape(tokens)[1];
                let cls = g.param(self.cls.expect("cls bound"));
                let cls = g.broadcast_batch(cls, n)?;
                let mut x = g.concat_seq(tokens, cls)?;
                let mut last = None;
                for (i, layer) in self.attn.iter().enumerate() {
                    let a = layer.forward(g, x, x)?;
                    last = Some(a);
                    x = self.post_attention(g, i, a)?;
                }
                let pooled = g.select_seq(x, k)?;
                (pooled, pooled, None, last)
            }
            Architecture::OcCa => {
                let tokens = self.tokens(g, maps)?;
                let slots = g.param(self.slots.expect("slots bound"));
                let mut x = g.broadcast_batch(slots, n)?;
                let mut last = None;
                for (i, layer) in self.attn.iter().enumerate() {
                    let a = layer.forward(g, x, tokens)?;
                    last = Some(a);
                    x = self.post_attention(g, i, a)?;
                }
                let pooled = g.mean_seq(x)?;
                (pooled, pooled, None, last)
            }
        };
        let logits = self.pi.forward(g, actor_in)?;
        let value = self.v.forward(g, critic_in)?;
        let value = g.reshape(value, &[n])?;
        Ok(GraphOutput {
            logits,
            value,
            state: new_state,
            attention,
        })
    }

    /// Inference on a batch of observations.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        observations: &[Observation],
        state: Option<&RecurrentState<T>>,
    ) -> Result<PolicyOutput<T>> {
        if observations.is_empty() {
            return Err(AgentError::Config("empty observation batch".into()));
        }
        let mut g = Graph::with_params(store);
        let obs = g.input(observation_batch(observations));
        let owned;
        let state = match (state, self.config.architecture.is_recurrent()) {
            (Some(s), true) => Some(s),
            (None, true) => {
                owned = self.initial_state(observations.len()).expect("recurrent");
                Some(&owned)
            }
            _ => None,
        };
        let sv = state.map(|s| StateVars::input(&mut g, s));
        let out = self.forward_graph(&mut g, obs, sv)?;
        let attention = out.attention.map(|a| self.attention_output(&g, a));
        Ok(PolicyOutput {
            logits: g.value(out.logits).clone(),
            values: g.value(out.value).clone(),
            state: out.state.map(|s| s.read(&g)),
            attention,
        })
    }

    fn attention_output<T: Scalar>(&self, g: &Graph<'_, T>, node: Var) -> AttentionOutput {
        let c = &self.config;
        let (rows, cols) = c.patch_grid();
        let weights = g.aux(node)[0].cast::<f64>();
        let query = match c.architecture {
            Architecture::OcSa => AttentionQuery::Cls {
                index: c.n_patches(),
            },
            _ => AttentionQuery::Slots,
        };
        AttentionOutput {
            weights,
            query,
            axis: if c.use_slot_competition {
                SoftmaxAxis::Queries
            } else {
                SoftmaxAxis::Keys
            },
            geometry: PatchGeometry {
                patch: c.patch_size,
                stride: c.stride,
                rows,
                cols,
                image: IMAGE,
            },
        }
    }
}

/// Stacks observations into `[n, 3, 64, 64]` scaled to `[0, 1]`.
pub fn observation_batch<T: Scalar>(observations: &[Observation]) -> Tensor<T> {
    let plane = IMAGE * IMAGE;
    let scale = T::c(1.0 / 255.0);
    let mut data = vec![T::zero(); observations.len() * 3 * plane];
    for (b, obs) in observations.iter().enumerate() {
        for (p, px) in obs.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[(b * 3 + c) * plane + p] = T::c(px[c] as f64) * scale;
            }
        }
    }
    Tensor::new(&[observations.len(), 3, IMAGE, IMAGE], data).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_layout_is_channel_major() {
        let mut obs = Observation::blank();
        obs.pixels[(2 * IMAGE + 5) * 3 + 1] = 255;
        let t = observation_batch::<f32>(&[obs]);
        assert_eq!(t.data()[IMAGE * IMAGE + 2 * IMAGE + 5], 1.0);
        assert_eq!(t.sum(), 1.0);
    }

    #[test]
    fn plans_count_heads() {
        let cfg = AgentConfig::new(Architecture::PpoCnn);
        let p = plan(&cfg).unwrap();
        let pi = p.entries.iter().find(|e| e.name == "pi.w").unwrap();
        assert_eq!(pi.shape, vec![17, 512]);
    }
}

//! Parameterized layers. A [`ParamPlan`] lists every tensor a network needs
//! so it can be counted without allocating, then materialized into a store;
//! layers bind to the stored tensors by name.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::kernels::SoftmaxAxis;
use crate::params::{gaussian, orthogonal, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Orthogonal over `[shape[0], rest]` scaled by the gain.
    Orthogonal(f64),
    Gaussian(f64),
    Zeros,
    Ones,
    /// Constant fill, e.g. a gate bias.
    Const(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamPlan {
    pub entries: Vec<ParamSpec>,
}

impl ParamPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: Init) {
        self.entries.push(ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        });
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|e| numel(&e.shape)).sum()
    }

    pub fn materialize<T: Scalar, R: Rng>(&self, rng: &mut R) -> ParamStore<T> {
        let mut store = ParamStore::new();
        for e in &self.entries {
            let t = match e.init {
                Init::Orthogonal(gain) => {
                    let rows = e.shape[0];
                    let cols = numel(&e.shape) / rows.max(1);
                    orthogonal::<T, R>(rows, cols, gain, rng)
                        .reshape(&e.shape)
                        .expect("same element count")
                }
                Init::Gaussian(std) => gaussian(&e.shape, std, rng),
                Init::Zeros => Tensor::zeros(&e.shape),
                Init::Ones => Tensor::full(&e.shape, T::one()),
                Init::Const(v) => Tensor::full(&e.shape, T::c(v)),
            };
            store.add(e.name.clone(), t);
        }
        store
    }

    /// Checks that `store` holds exactly the planned names and shapes.
    pub fn check<T: Scalar>(&self, store: &ParamStore<T>) -> Result<()> {
        if store.len() != self.entries.len() {
            return Err(NnError::Invalid(format!(
                "expected {} parameter tensors, found {}",
                self.entries.len(),
                store.len()
            )));
        }
        for (i, e) in self.entries.iter().enumerate() {
            let id = ParamId(i);
            if store.name(id) != e.name || store.get(id).shape() != e.shape.as_slice() {
                return Err(NnError::Invalid(format!(
                    "parameter {i}: expected {} {:?}, found {} {:?}",
                    e.name,
                    e.shape,
                    store.name(id),
                    store.get(id).shape()
                )));
            }
        }
        Ok(())
    }
}

fn lookup<T: Scalar>(store: &ParamStore<T>, name: &str) -> Result<ParamId> {
    store
        .find(name)
        .ok_or_else(|| NnError::Invalid(format!("missing parameter {name}")))
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn plan(plan: &mut ParamPlan, name: &str, inputs: usize, outputs: usize, gain: f64) {
        plan.push(format!("{name}.w"), &[outputs, inputs], Init::Orthogonal(gain));
        plan.push(format!("{name}.b"), &[outputs], Init::Zeros);
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, name: &str) -> Result<Self> {
        Ok(Self {
            w: lookup(store, &format!("{name}.w"))?,
            b: lookup(store, &format!("{name}.b"))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn plan(plan: &mut ParamPlan, name: &str, c_in: usize, c_out: usize, kernel: usize, gain: f64) {
        plan.push(format!("{name}.w"), &[c_out, c_in, kernel, kernel], Init::Orthogonal(gain));
        plan.push(format!("{name}.b"), &[c_out], Init::Zeros);
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, name: &str, stride: usize, pad: usize) -> Result<Self> {
        Ok(Self {
            w: lookup(store, &format!("{name}.w"))?,
            b: lookup(store, &format!("{name}.b"))?,
            stride,
            pad,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// LSTM cell with gates packed as `[input, forget, cell, output]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn plan(plan: &mut ParamPlan, name: &str, inputs: usize, hidden: usize) {
        plan.push(format!("{name}.w"), &[4 * hidden, inputs + hidden], Init::Orthogonal(1.0));
        plan.push(format!("{name}.b"), &[4 * hidden], Init::Zeros);
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, name: &str) -> Result<Self> {
        let b = lookup(store, &format!("{name}.b"))?;
        let hidden = store.get(b).len() / 4;
        Ok(Self {
            w: lookup(store, &format!("{name}.w"))?,
            b,
            hidden,
        })
    }

    /// One step: `x [n, in]`, `h, c [n, hidden]` to `(h', c')`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        if g.shape(h).last() != Some(&hd) || g.shape(c) != g.shape(h) {
            return Err(NnError::Shape(format!(
                "lstm state {:?}/{:?} for hidden {hd}",
                g.shape(h),
                g.shape(c)
            )));
        }
        let xh = g.concat_last(&[x, h])?;
        let (w, b) = (g.param(self.w), g.param(self.b));
        let gates = g.linear(xh, w, Some(b))?;
        let i = g.slice_last(gates, 0, hd)?;
        let f = g.slice_last(gates, hd, hd)?;
        let u = g.slice_last(gates, 2 * hd, hd)?;
        let o = g.slice_last(gates, 3 * hd, hd)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let u = g.tanh(u);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, u)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LAYERNORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn plan(plan: &mut ParamPlan, name: &str, dim: usize) {
        plan.push(format!("{name}.gamma"), &[dim], Init::Ones);
        plan.push(format!("{name}.beta"), &[dim], Init::Zeros);
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, name: &str) -> Result<Self> {
        Ok(Self {
            gamma: lookup(store, &format!("{name}.gamma"))?,
            beta: lookup(store, &format!("{name}.beta"))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layernorm(x, gamma, beta, LAYERNORM_EPS)
    }
}

/// `x + W2 relu(W1 x)`. The output projection starts at zero so a fresh
/// block is the identity.
#[derive(Debug, Clone, Copy)]
pub struct ResidualMlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl ResidualMlp {
    pub fn plan(plan: &mut ParamPlan, name: &str, dim: usize, hidden: usize) {
        Linear::plan(plan, &format!("{name}.fc1"), dim, hidden, 2f64.sqrt());
        plan.push(format!("{name}.fc2.w"), &[dim, hidden], Init::Zeros);
        plan.push(format!("{name}.fc2.b"), &[dim], Init::Zeros);
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, name: &str) -> Result<Self> {
        Ok(Self {
            hidden: Linear::bind(store, &format!("{name}.fc1"))?,
            out: Linear::bind(store, &format!("{name}.fc2"))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        let h = g.relu(h);
        let y = self.out.forward(g, h)?;
        g.add(x, y)
    }
}

/// Multi-head attention with separate query, key and value maps.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub heads: usize,
    pub axis: SoftmaxAxis,
}

impl Attention {
    pub fn plan(plan: &mut ParamPlan, name: &str, dim: usize) {
        for m in ["q", "k", "v"] {
            Linear::plan(plan, &format!("{name}.{m}"), dim, dim, 1.0);
        }
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, name: &str, heads: usize, axis: SoftmaxAxis) -> Result<Self> {
        Ok(Self {
            q: Linear::bind(store, &format!("{name}.q"))?,
            k: Linear::bind(store, &format!("{name}.k"))?,
            v: Linear::bind(store, &format!("{name}.v"))?,
            heads,
            axis,
        })
    }

    /// Queries from `xq [n, lq, d]`, keys and values from `xkv [n, lk, d]`.
    /// Returns the output and the node holding the attention weights.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, xq: Var, xkv: Var) -> Result<Var> {
        let q = self.q.forward(g, xq)?;
        let k = self.k.forward(g, xkv)?;
        let v = self.v.forward(g, xkv)?;
        g.attention(q, k, v, self.heads, self.axis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn plan_counts_match_materialized() {
        let mut plan = ParamPlan::new();
        Linear::plan(&mut plan, "fc", 7, 5, 1.0);
        Conv2d::plan(&mut plan, "conv", 3, 4, 3, 1.0);
        LstmCell::plan(&mut plan, "lstm", 6, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let store: ParamStore<f32> = plan.materialize(&mut rng);
        assert_eq!(plan.num_params(), store.num_params());
        assert_eq!(plan.num_params(), 7 * 5 + 5 + 4 * 27 + 4 + 32 * 14 + 32);
        plan.check(&store).unwrap();
    }

    #[test]
    fn fresh_residual_block_is_identity() {
        let mut plan = ParamPlan::new();
        ResidualMlp::plan(&mut plan, "res", 6, 12);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let store: ParamStore<f64> = plan.materialize(&mut rng);
        let block = ResidualMlp::bind(&store, "res").unwrap();
        let mut g = Graph::with_params(&store);
        let x = Tensor::from_fn(&[2, 6], |i| i as f64 * 0.3 - 1.0);
        let xv = g.input(x.clone());
        let y = block.forward(&mut g, xv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn saturated_gates_keep_cell() {
        let mut plan = ParamPlan::new();
        LstmCell::plan(&mut plan, "lstm", 3, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut store: ParamStore<f64> = plan.materialize(&mut rng);
        let cell = LstmCell::bind(&store, "lstm").unwrap();
        let b = store.get_mut(cell.b).data_mut();
        for j in 0..4 {
            b[j] = -60.0;
            b[4 + j] = 60.0;
        }
        let mut g = Graph::with_params(&store);
        let x = g.input(Tensor::from_fn(&[1, 3], |i| i as f64 - 1.0));
        let h = g.input(Tensor::from_fn(&[1, 4], |i| 0.1 * i as f64));
        let c0 = Tensor::from_fn(&[1, 4], |i| 0.5 - 0.2 * i as f64);
        let c = g.input(c0.clone());
        let (_, c1) = cell.forward(&mut g, x, h, c).unwrap();
        assert!(g.value(c1).max_abs_diff(&c0) < 1e-12);
    }
}

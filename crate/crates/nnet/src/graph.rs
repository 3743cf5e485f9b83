//! Tape of tensor operations with reverse-mode differentiation.

use std::collections::HashMap;

use crate::error::{NnError, Result};
use crate::kernels::{self, AttnGeom, ConvGeom, SoftmaxAxis};
use crate::params::{Grads, ParamId, ParamStore};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::{numel, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Square,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: usize, w: usize, b: Option<usize> },
    Conv2d { x: usize, w: usize, b: Option<usize>, geom: ConvGeom },
    Unary { x: usize, kind: Unary },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, s: f64 },
    AddScalar { x: usize },
    AddBroadcast { x: usize, b: usize },
    Reshape { x: usize },
    SliceLast { x: usize, start: usize },
    ConcatLast { xs: Vec<usize> },
    ConcatSeq { a: usize, b: usize },
    BroadcastBatch { x: usize },
    SelectSeq { x: usize, index: usize },
    MeanSeq { x: usize },
    Patches { x: usize, patch: usize, stride: usize },
    Attention { q: usize, k: usize, v: usize, geom: AttnGeom, axis: SoftmaxAxis },
    LayerNorm { x: usize, gamma: usize, beta: usize },
    LogSoftmax { x: usize },
    Gather { x: usize, index: Vec<usize> },
    SumLast { x: usize },
    Sum { x: usize },
    Mean { x: usize },
    Minimum { a: usize, b: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

struct Node<T> {
    value: Value<T>,
    op: Op,
    needs_grad: bool,
    /// Saved intermediates: attention weights, or layernorm (xhat, rstd).
    aux: Vec<Tensor<T>>,
}

/// A computation tape. Parameter nodes borrow their data from a store.
pub struct Graph<'s, T: Scalar> {
    store: Option<&'s ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, usize>,
}

fn shape_err(msg: String) -> NnError {
    NnError::Shape(msg)
}

impl<'s, T: Scalar> Default for Graph<'s, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn with_params(store: &'s ParamStore<T>) -> Self {
        Self {
            store: Some(store),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[*i].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    /// A leaf whose gradient can be read back after [`Graph::backward`].
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Leaf,
            needs_grad: requires_grad,
            aux: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&n) = self.param_nodes.get(&id) {
            return Var(n);
        }
        assert!(self.store.is_some(), "graph has no parameter store");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
            needs_grad: true,
            aux: Vec::new(),
        });
        let n = self.nodes.len() - 1;
        self.param_nodes.insert(id, n);
        Var(n)
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        match &self.nodes[i].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("store").get(*id),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.val(v.0)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.val(v.0).shape()
    }

    /// Saved auxiliary tensors of a node (attention weights live at index 0).
    pub fn aux(&self, v: Var) -> &[Tensor<T>] {
        &self.nodes[v.0].aux
    }

    // ----- operations -----

    /// `x W^T + b` over the last axis. x `[.., in]`, w `[out, in]`, b `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws.len() != 2 || xs.last() != Some(&ws[1]) {
            return Err(shape_err(format!("linear input {xs:?} with weight {ws:?}")));
        }
        let (out_f, in_f) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [out_f] {
                return Err(shape_err(format!("linear bias {:?} for {out_f} outputs", self.shape(b))));
            }
        }
        let rows = numel(&xs) / in_f;
        let mut y = vec![T::zero(); rows * out_f];
        gemm(
            T::one(),
            self.val(x.0).data(),
            MatRef::dense(rows, in_f),
            self.val(w.0).data(),
            MatRef::dense(out_f, in_f).t(),
            T::zero(),
            &mut y,
            MatRef::dense(rows, out_f),
        );
        if let Some(b) = b {
            let bias = self.val(b.0).data();
            for r in 0..rows {
                for (v, bv) in y[r * out_f..(r + 1) * out_f].iter_mut().zip(bias) {
                    *v += *bv;
                }
            }
        }
        let mut shape = xs;
        *shape.last_mut().expect("rank >= 1") = out_f;
        let inputs: Vec<usize> = [Some(x.0), Some(w.0), b.map(|b| b.0)].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(&shape, y)?, Op::Linear { x: x.0, w: w.0, b: b.map(|b| b.0) }, &inputs))
    }

    /// Cross-correlation. x `[n, c, h, w]`, w `[oc, c, kh, kw]`, b `[oc]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(shape_err(format!("conv2d input {xs:?} with weight {ws:?}")));
        }
        if stride == 0 || xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(shape_err(format!("conv2d kernel {ws:?} does not fit input {xs:?} (pad {pad}, stride {stride})")));
        }
        let geom = ConvGeom {
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            stride,
            pad,
        };
        let oc = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [oc] {
                return Err(shape_err(format!("conv2d bias {:?} for {oc} channels", self.shape(b))));
            }
        }
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let mut y = vec![T::zero(); xs[0] * oc * oh * ow];
        kernels::conv_forward(
            self.val(x.0).data(),
            xs[0],
            geom,
            self.val(w.0).data(),
            oc,
            b.map(|b| self.val(b.0).data()),
            &mut y,
        );
        let inputs: Vec<usize> = [Some(x.0), Some(w.0), b.map(|b| b.0)].into_iter().flatten().collect();
        Ok(self.push(
            Tensor::new(&[xs[0], oc, oh, ow], y)?,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                geom,
            },
            &inputs,
        ))
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let f = |v: T| match kind {
            Unary::Relu => v.max(T::zero()),
            Unary::Tanh => v.tanh(),
            Unary::Sigmoid => T::one() / (T::one() + (-v).exp()),
            Unary::Exp => v.exp(),
            Unary::Square => v * v,
        };
        let y = self.val(x.0).map(f);
        self.push(y, Op::Unary { x: x.0, kind }, &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.val(a.0).zip_map(self.val(b.0), |x, y| x + y);
        Ok(self.push(y, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.val(a.0).zip_map(self.val(b.0), |x, y| x - y);
        Ok(self.push(y, Op::Sub { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.val(a.0).zip_map(self.val(b.0), |x, y| x * y);
        Ok(self.push(y, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "minimum")?;
        let y = self.val(a.0).zip_map(self.val(b.0), |x, y| if x <= y { x } else { y });
        Ok(self.push(y, Op::Minimum { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let sc = T::c(s);
        let y = self.val(x.0).map(|v| v * sc);
        self.push(y, Op::Scale { x: x.0, s }, &[x.0])
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let sc = T::c(s);
        let y = self.val(x.0).map(|v| v + sc);
        self.push(y, Op::AddScalar { x: x.0 }, &[x.0])
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::c(lo), T::c(hi));
        let y = self.val(x.0).map(|v| v.max(l).min(h));
        self.push(y, Op::Clamp { x: x.0, lo, hi }, &[x.0])
    }

    /// Adds `b` to every trailing block of `x`; `b`'s shape must equal the
    /// trailing dims of `x` (bias-style broadcasting only).
    pub fn add_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != bs[..] {
            return Err(shape_err(format!("cannot broadcast {bs:?} onto {xs:?}")));
        }
        let bl = numel(&bs);
        let bd = self.val(b.0).data().to_vec();
        let mut y = self.val(x.0).clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += bd[i % bl];
        }
        Ok(self.push(y, Op::AddBroadcast { x: x.0, b: b.0 }, &[x.0, b.0]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.val(x.0).clone().reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x: x.0 }, &[x.0]))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| shape_err("slice of scalar".into()))?;
        if start + len > d {
            return Err(shape_err(format!("slice {start}..{} of last axis {d}", start + len)));
        }
        let rows = numel(&xs) / d;
        let src = self.val(x.0).data();
        let mut y = Vec::with_capacity(rows * len);
        for r in 0..rows {
            y.extend_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let mut shape = xs;
        *shape.last_mut().expect("rank >= 1") = len;
        Ok(self.push(Tensor::new(&shape, y)?, Op::SliceLast { x: x.0, start }, &[x.0]))
    }

    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut total = 0;
        for v in xs {
            let s = self.shape(*v);
            if &s[..s.len() - 1] != lead {
                return Err(shape_err(format!("concat_last {first:?} with {s:?}")));
            }
            total += s[s.len() - 1];
        }
        let rows = numel(lead);
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in xs {
                let t = self.val(v.0);
                let d = t.last_dim();
                y.extend_from_slice(&t.data()[r * d..(r + 1) * d]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(Tensor::new(&shape, y)?, Op::ConcatLast { xs: ids.clone() }, &ids))
    }

    /// Concatenates `[n, la, d]` and `[n, lb, d]` along the sequence axis.
    pub fn concat_seq(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] || as_[2] != bs[2] {
            return Err(shape_err(format!("concat_seq {as_:?} with {bs:?}")));
        }
        let (n, la, lb, d) = (as_[0], as_[1], bs[1], as_[2]);
        let (ad, bd) = (self.val(a.0).data(), self.val(b.0).data());
        let mut y = Vec::with_capacity(n * (la + lb) * d);
        for i in 0..n {
            y.extend_from_slice(&ad[i * la * d..(i + 1) * la * d]);
            y.extend_from_slice(&bd[i * lb * d..(i + 1) * lb * d]);
        }
        Ok(self.push(Tensor::new(&[n, la + lb, d], y)?, Op::ConcatSeq { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// Repeats `[l, d]` into `[n, l, d]`.
    pub fn broadcast_batch(&mut self, x: Var, n: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(shape_err(format!("broadcast_batch expects rank 2, got {xs:?}")));
        }
        let src = self.val(x.0).data();
        let mut y = Vec::with_capacity(n * src.len());
        for _ in 0..n {
            y.extend_from_slice(src);
        }
        Ok(self.push(Tensor::new(&[n, xs[0], xs[1]], y)?, Op::BroadcastBatch { x: x.0 }, &[x.0]))
    }

    /// Element `index` of the sequence axis: `[n, l, d] -> [n, d]`.
    pub fn select_seq(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || index >= xs[1] {
            return Err(shape_err(format!("select_seq {index} of {xs:?}")));
        }
        let (n, l, d) = (xs[0], xs[1], xs[2]);
        let src = self.val(x.0).data();
        let mut y = Vec::with_capacity(n * d);
        for i in 0..n {
            y.extend_from_slice(&src[(i * l + index) * d..(i * l + index + 1) * d]);
        }
        Ok(self.push(Tensor::new(&[n, d], y)?, Op::SelectSeq { x: x.0, index }, &[x.0]))
    }

    /// Mean over the sequence axis: `[n, l, d] -> [n, d]`.
    pub fn mean_seq(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(shape_err(format!("mean_seq expects rank 3, got {xs:?}")));
        }
        let (n, l, d) = (xs[0], xs[1], xs[2]);
        let src = self.val(x.0).data();
        let inv = T::one() / T::c(l as f64);
        let mut y = vec![T::zero(); n * d];
        for i in 0..n {
            for j in 0..l {
                for (t, v) in y[i * d..(i + 1) * d].iter_mut().zip(&src[(i * l + j) * d..(i * l + j + 1) * d]) {
                    *t += *v;
                }
            }
        }
        for v in &mut y {
            *v *= inv;
        }
        Ok(self.push(Tensor::new(&[n, d], y)?, Op::MeanSeq { x: x.0 }, &[x.0]))
    }

    /// Row-major patch split of `[n, c, h, w]` into `[n, k, c*patch*patch]`.
    pub fn patches(&mut self, x: Var, patch: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(shape_err(format!("patches expects [n, c, h, w], got {xs:?}")));
        }
        let geom = patch_grid(xs[2], xs[3], patch, stride)?;
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let k = geom.0 * geom.1;
        let f = c * patch * patch;
        let src = self.val(x.0).data();
        let mut y = vec![T::zero(); n * k * f];
        for b in 0..n {
            for gy in 0..geom.0 {
                for gx in 0..geom.1 {
                    let base = (b * k + gy * geom.1 + gx) * f;
                    for ci in 0..c {
                        for py in 0..patch {
                            let row = ((b * c + ci) * h + gy * stride + py) * w + gx * stride;
                            let dst = base + (ci * patch + py) * patch;
                            y[dst..dst + patch].copy_from_slice(&src[row..row + patch]);
                        }
                    }
                }
            }
        }
        Ok(self.push(Tensor::new(&[n, k, f], y)?, Op::Patches { x: x.0, patch, stride }, &[x.0]))
    }

    /// Multi-head attention. q `[n, lq, d]`, k and v `[n, lk, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, axis: SoftmaxAxis) -> Result<Var> {
        let (qs, ks, vs) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if qs.len() != 3 || ks != vs || ks.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(shape_err(format!("attention q {qs:?} k {ks:?} v {vs:?}")));
        }
        if heads == 0 || qs[2] % heads != 0 {
            return Err(shape_err(format!("dimension {} not divisible into {heads} heads", qs[2])));
        }
        let geom = AttnGeom {
            n: qs[0],
            lq: qs[1],
            lk: ks[1],
            d: qs[2],
            heads,
        };
        let mut out = vec![T::zero(); geom.n * geom.lq * geom.d];
        let mut weights = vec![T::zero(); geom.weights_len()];
        kernels::attention_forward(
            self.val(q.0).data(),
            self.val(k.0).data(),
            self.val(v.0).data(),
            geom,
            axis,
            &mut out,
            &mut weights,
        );
        let var = self.push(
            Tensor::new(&qs, out)?,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                geom,
                axis,
            },
            &[q.0, k.0, v.0],
        );
        self.nodes[var.0].aux = vec![Tensor::new(&[geom.n, heads, geom.lq, geom.lk], weights)?];
        Ok(var)
    }

    /// Normalizes the last axis to zero mean and unit variance, then scales
    /// by `gamma` and shifts by `beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let d = *xs.last().ok_or_else(|| shape_err("layernorm of scalar".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(format!("layernorm params must be [{d}]")));
        }
        let rows = numel(&xs) / d;
        let src = self.val(x.0).data();
        let (g, b) = (self.val(gamma.0).data(), self.val(beta.0).data());
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut y = vec![T::zero(); rows * d];
        let inv_d = T::one() / T::c(d as f64);
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::c(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                y[r * d + j] = xh * g[j] + b[j];
            }
        }
        let var = self.push(
            Tensor::new(&xs, y)?,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
            },
            &[x.0, gamma.0, beta.0],
        );
        self.nodes[var.0].aux = vec![Tensor::new(&xs, xhat)?, Tensor::new(&[rows], rstd)?];
        Ok(var)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let t = self.val(x.0);
        let d = t.last_dim();
        let rows = t.len() / d;
        let mut y = t.data().to_vec();
        for r in 0..rows {
            let row = &mut y[r * d..(r + 1) * d];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|v| (*v - max).exp()).sum::<T>().ln() + max;
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::new(&shape, y).expect("same shape"), Op::LogSoftmax { x: x.0 }, &[x.0])
    }

    /// Picks `x[i, index[i]]` from `[n, c]`.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || xs[0] != index.len() || index.iter().any(|i| *i >= xs[1]) {
            return Err(shape_err(format!("gather {} indices from {xs:?}", index.len())));
        }
        let src = self.val(x.0).data();
        let y: Vec<T> = index.iter().enumerate().map(|(r, c)| src[r * xs[1] + c]).collect();
        Ok(self.push(
            Tensor::new(&[index.len()], y)?,
            Op::Gather {
                x: x.0,
                index: index.to_vec(),
            },
            &[x.0],
        ))
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let t = self.val(x.0);
        let d = t.last_dim();
        let rows = t.len() / d;
        let y: Vec<T> = (0..rows).map(|r| t.data()[r * d..(r + 1) * d].iter().copied().sum()).collect();
        let mut shape = t.shape().to_vec();
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(Tensor::new(&shape, y).expect("row count"), Op::SumLast { x: x.0 }, &[x.0])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.val(x.0).sum();
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.val(x.0);
        let s = t.sum() / T::c(t.len() as f64);
        self.push(Tensor::scalar(s), Op::Mean { x: x.0 }, &[x.0])
    }

    // ----- backward -----

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.val(loss.0).len() != 1 {
            return Err(shape_err(format!("loss must have one element, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn backward_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = self.val(i);
        let acc = |grads: &mut [Option<Tensor<T>>], j: usize, t: Tensor<T>| match &mut grads[j] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (out_f, in_f) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.len() / in_f;
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); rows * in_f];
                    gemm(T::one(), g.data(), MatRef::dense(rows, out_f), wv.data(), MatRef::dense(out_f, in_f), T::zero(), &mut dx, MatRef::dense(rows, in_f));
                    acc(grads, *x, Tensor::new(xv.shape(), dx)?);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); out_f * in_f];
                    gemm(T::one(), g.data(), MatRef::dense(rows, out_f).t(), xv.data(), MatRef::dense(rows, in_f), T::zero(), &mut dw, MatRef::dense(out_f, in_f));
                    acc(grads, *w, Tensor::new(wv.shape(), dw)?);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![T::zero(); out_f];
                        for r in 0..rows {
                            for (d, v) in db.iter_mut().zip(&g.data()[r * out_f..(r + 1) * out_f]) {
                                *d += *v;
                            }
                        }
                        acc(grads, *b, Tensor::new(&[out_f], db)?);
                    }
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let n = xv.shape()[0];
                let oc = wv.shape()[0];
                let mut dx = self.wants(*x).then(|| vec![T::zero(); xv.len()]);
                let mut dw = self.wants(*w).then(|| vec![T::zero(); wv.len()]);
                let want_b = b.is_some_and(|b| self.wants(b));
                let mut db = want_b.then(|| vec![T::zero(); oc]);
                kernels::conv_backward(
                    xv.data(),
                    n,
                    *geom,
                    wv.data(),
                    oc,
                    g.data(),
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    acc(grads, *x, Tensor::new(xv.shape(), dx)?);
                }
                if let Some(dw) = dw {
                    acc(grads, *w, Tensor::new(wv.shape(), dw)?);
                }
                if let (Some(db), Some(b)) = (db, b) {
                    acc(grads, *b, Tensor::new(&[oc], db)?);
                }
            }
            Op::Unary { x, kind } => {
                if self.wants(*x) {
                    let xv = self.val(*x);
                    let two = T::c(2.0);
                    let d = Tensor::from_fn(xv.shape(), |j| {
                        let (gy, yv, xj) = (g.data()[j], y.data()[j], xv.data()[j]);
                        match kind {
                            Unary::Relu => {
                                if xj > T::zero() {
                                    gy
                                } else {
                                    T::zero()
                                }
                            }
                            Unary::Tanh => gy * (T::one() - yv * yv),
                            Unary::Sigmoid => gy * yv * (T::one() - yv),
                            Unary::Exp => gy * yv,
                            Unary::Square => gy * two * xj,
                        }
                    });
                    acc(grads, *x, d);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    acc(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if self.wants(*a) {
                    acc(grads, *a, g.zip_map(bv, |x, y| x * y));
                }
                if self.wants(*b) {
                    acc(grads, *b, g.zip_map(av, |x, y| x * y));
                }
            }
            Op::Minimum { a, b } => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let pick_a = |j: usize| av.data()[j] <= bv.data()[j];
                if self.wants(*a) {
                    acc(grads, *a, Tensor::from_fn(g.shape(), |j| if pick_a(j) { g.data()[j] } else { T::zero() }));
                }
                if self.wants(*b) {
                    acc(grads, *b, Tensor::from_fn(g.shape(), |j| if pick_a(j) { T::zero() } else { g.data()[j] }));
                }
            }
            Op::Scale { x, s } => {
                if self.wants(*x) {
                    let sc = T::c(*s);
                    acc(grads, *x, g.map(|v| v * sc));
                }
            }
            Op::AddScalar { x } => {
                if self.wants(*x) {
                    acc(grads, *x, g.clone());
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.wants(*x) {
                    let xv = self.val(*x);
                    let (l, h) = (T::c(*lo), T::c(*hi));
                    acc(
                        grads,
                        *x,
                        Tensor::from_fn(g.shape(), |j| {
                            let v = xv.data()[j];
                            if v >= l && v <= h {
                                g.data()[j]
                            } else {
                                T::zero()
                            }
                        }),
                    );
                }
            }
            Op::AddBroadcast { x, b } => {
                if self.wants(*x) {
                    acc(grads, *x, g.clone());
                }
                if self.wants(*b) {
                    let bs = self.val(*b).shape().to_vec();
                    let bl = numel(&bs);
                    let mut db = vec![T::zero(); bl];
                    for (j, v) in g.data().iter().enumerate() {
                        db[j % bl] += *v;
                    }
                    acc(grads, *b, Tensor::new(&bs, db)?);
                }
            }
            Op::Reshape { x } => {
                if self.wants(*x) {
                    acc(grads, *x, g.clone().reshape(self.val(*x).shape())?);
                }
            }
            Op::SliceLast { x, start } => {
                if self.wants(*x) {
                    let xv = self.val(*x);
                    let d = xv.last_dim();
                    let len = g.last_dim();
                    let rows = xv.len() / d;
                    let mut dx = vec![T::zero(); xv.len()];
                    for r in 0..rows {
                        dx[r * d + start..r * d + start + len].copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                    acc(grads, *x, Tensor::new(xv.shape(), dx)?);
                }
            }
            Op::ConcatLast { xs } => {
                let total = g.last_dim();
                let rows = g.len() / total;
                let mut offset = 0;
                for x in xs {
                    let xv = self.val(*x);
                    let d = xv.last_dim();
                    if self.wants(*x) {
                        let mut dx = Vec::with_capacity(xv.len());
                        for r in 0..rows {
                            dx.extend_from_slice(&g.data()[r * total + offset..r * total + offset + d]);
                        }
                        acc(grads, *x, Tensor::new(xv.shape(), dx)?);
                    }
                    offset += d;
                }
            }
            Op::ConcatSeq { a, b } => {
                let (as_, bs) = (self.val(*a).shape().to_vec(), self.val(*b).shape().to_vec());
                let (n, la, lb, d) = (as_[0], as_[1], bs[1], as_[2]);
                let mut da = Vec::with_capacity(n * la * d);
                let mut dbv = Vec::with_capacity(n * lb * d);
                for i in 0..n {
                    let base = i * (la + lb) * d;
                    da.extend_from_slice(&g.data()[base..base + la * d]);
                    dbv.extend_from_slice(&g.data()[base + la * d..base + (la + lb) * d]);
                }
                if self.wants(*a) {
                    acc(grads, *a, Tensor::new(&as_, da)?);
                }
                if self.wants(*b) {
                    acc(grads, *b, Tensor::new(&bs, dbv)?);
                }
            }
            Op::BroadcastBatch { x } => {
                if self.wants(*x) {
                    let xv = self.val(*x);
                    let l = xv.len();
                    let mut dx = vec![T::zero(); l];
                    for chunk in g.data().chunks_exact(l) {
                        for (d, v) in dx.iter_mut().zip(chunk) {
                            *d += *v;
                        }
                    }
                    acc(grads, *x, Tensor::new(xv.shape(), dx)?);
                }
            }
            Op::SelectSeq { x, index } => {
                if self.wants(*x) {
                    let xs = self.val(*x).shape().to_vec();
                    let (n, l, d) = (xs[0], xs[1], xs[2]);
                    let mut dx = vec![T::zero(); n * l * d];
                    for b in 0..n {
                        dx[(b * l + index) * d..(b * l + index + 1) * d].copy_from_slice(&g.data()[b * d..(b + 1) * d]);
                    }
                    acc(grads, *x, Tensor::new(&xs, dx)?);
                }
            }
            Op::MeanSeq { x } => {
                if self.wants(*x) {
                    let xs = self.val(*x).shape().to_vec();
                    let (n, l, d) = (xs[0], xs[1], xs[2]);
                    let inv = T::one() / T::c(l as f64);
                    let dx = Tensor::from_fn(&xs, |j| {
                        let b = j / (l * d);
                        g.data()[b * d + j % d] * inv
                    });
                    let _ = n;
                    acc(grads, *x, dx);
                }
            }
            Op::Patches { x, patch, stride } => {
                if self.wants(*x) {
                    let xs = self.val(*x).shape().to_vec();
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let grid = patch_grid(h, w, *patch, *stride)?;
                    let k = grid.0 * grid.1;
                    let f = c * patch * patch;
                    let mut dx = vec![T::zero(); n * c * h * w];
                    for b in 0..n {
                        for gy in 0..grid.0 {
                            for gx in 0..grid.1 {
                                let base = (b * k + gy * grid.1 + gx) * f;
                                for ci in 0..c {
                                    for py in 0..*patch {
                                        let row = ((b * c + ci) * h + gy * stride + py) * w + gx * stride;
                                        let src = base + (ci * patch + py) * patch;
                                        for px in 0..*patch {
                                            dx[row + px] += g.data()[src + px];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    acc(grads, *x, Tensor::new(&xs, dx)?);
                }
            }
            Op::Attention { q, k, v, geom, axis } => {
                let (qv, kv, vv) = (self.val(*q), self.val(*k), self.val(*v));
                let mut dq = vec![T::zero(); qv.len()];
                let mut dk = vec![T::zero(); kv.len()];
                let mut dv = vec![T::zero(); vv.len()];
                kernels::attention_backward(
                    qv.data(),
                    kv.data(),
                    vv.data(),
                    node.aux[0].data(),
                    *geom,
                    *axis,
                    g.data(),
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                if self.wants(*q) {
                    acc(grads, *q, Tensor::new(qv.shape(), dq)?);
                }
                if self.wants(*k) {
                    acc(grads, *k, Tensor::new(kv.shape(), dk)?);
                }
                if self.wants(*v) {
                    acc(grads, *v, Tensor::new(vv.shape(), dv)?);
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let (xhat, rstd) = (&node.aux[0], &node.aux[1]);
                let gam = self.val(*gamma).data();
                let d = gam.len();
                let rows = xhat.len() / d;
                if self.wants(*gamma) {
                    let mut dg = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g.data()[r * d + j] * xhat.data()[r * d + j];
                        }
                    }
                    acc(grads, *gamma, Tensor::new(&[d], dg)?);
                }
                if self.wants(*beta) {
                    let mut db = vec![T::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] += g.data()[r * d + j];
                        }
                    }
                    acc(grads, *beta, Tensor::new(&[d], db)?);
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); rows * d];
                    let dn = T::c(d as f64);
                    for r in 0..rows {
                        let xh = &xhat.data()[r * d..(r + 1) * d];
                        let gr = &g.data()[r * d..(r + 1) * d];
                        let dxh: Vec<T> = (0..d).map(|j| gr[j] * gam[j]).collect();
                        let s1: T = dxh.iter().copied().sum();
                        let s2: T = dxh.iter().zip(xh).map(|(a, b)| *a * *b).sum();
                        let rs = rstd.data()[r];
                        for j in 0..d {
                            dx[r * d + j] = rs / dn * (dn * dxh[j] - s1 - xh[j] * s2);
                        }
                    }
                    acc(grads, *x, Tensor::new(self.val(*x).shape(), dx)?);
                }
            }
            Op::LogSoftmax { x } => {
                if self.wants(*x) {
                    let d = y.last_dim();
                    let rows = y.len() / d;
                    let mut dx = vec![T::zero(); y.len()];
                    for r in 0..rows {
                        let gs: T = g.data()[r * d..(r + 1) * d].iter().copied().sum();
                        for j in 0..d {
                            let p = y.data()[r * d + j].exp();
                            dx[r * d + j] = g.data()[r * d + j] - p * gs;
                        }
                    }
                    acc(grads, *x, Tensor::new(y.shape(), dx)?);
                }
            }
            Op::Gather { x, index } => {
                if self.wants(*x) {
                    let xs = self.val(*x).shape().to_vec();
                    let mut dx = vec![T::zero(); xs[0] * xs[1]];
                    for (r, c) in index.iter().enumerate() {
                        dx[r * xs[1] + c] += g.data()[r];
                    }
                    acc(grads, *x, Tensor::new(&xs, dx)?);
                }
            }
            Op::SumLast { x } => {
                if self.wants(*x) {
                    let xv = self.val(*x);
                    let d = xv.last_dim();
                    acc(grads, *x, Tensor::from_fn(xv.shape(), |j| g.data()[j / d]));
                }
            }
            Op::Sum { x } => {
                if self.wants(*x) {
                    acc(grads, *x, Tensor::full(self.val(*x).shape(), g.item()));
                }
            }
            Op::Mean { x } => {
                if self.wants(*x) {
                    let xv = self.val(*x);
                    let s = g.item() / T::c(xv.len() as f64);
                    acc(grads, *x, Tensor::full(xv.shape(), s));
                }
            }
        }
        Ok(())
    }

    /// Collects parameter gradients into a store-aligned [`Grads`].
    pub fn param_grads(&self, grads: &Gradients<T>, store: &ParamStore<T>) -> Grads<T> {
        let mut out = Grads::zeros_like(store);
        for (id, node) in &self.param_nodes {
            if let Some(g) = &grads.grads[*node] {
                out.tensors[id.0].add_assign(g);
            }
        }
        out
    }
}

/// Patch grid `(rows, cols)` for a `h x w` map.
pub fn patch_grid(h: usize, w: usize, patch: usize, stride: usize) -> Result<(usize, usize)> {
    if patch == 0 || stride == 0 {
        return Err(NnError::Invalid("patch size and stride must be positive".into()));
    }
    if patch > h || patch > w {
        return Err(NnError::Invalid(format!("patch {patch} larger than map {h}x{w}")));
    }
    if stride > patch {
        return Err(NnError::Invalid(format!("stride {stride} > patch {patch} leaves gaps between patches")));
    }
    Ok(((h - patch) / stride + 1, (w - patch) / stride + 1))
}

/// Result of a reverse pass; holds gradients of leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

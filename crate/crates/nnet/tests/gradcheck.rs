//! Central finite-difference checks of every differentiable layer in f64.

use crafter_nnet::{
    Attention, Conv2d, Graph, LayerNorm, Linear, LstmCell, ParamPlan, ParamStore, ResidualMlp, Result, SoftmaxAxis,
    Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u64 = 100;
const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;

type Build = dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Loss is `sum(out * probe)` so every output element contributes.
fn loss(store: &ParamStore<f64>, inputs: &[Tensor<f64>], probe: &mut Option<Tensor<f64>>, seed: u64, build: &Build) -> f64 {
    let mut g = Graph::with_params(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars).unwrap();
    let shape = g.shape(out).to_vec();
    let p = probe.get_or_insert_with(|| random(&shape, &mut ChaCha8Rng::seed_from_u64(seed)));
    let p = g.input(p.clone());
    let prod = g.mul(out, p).unwrap();
    let s = g.sum(prod);
    g.value(s).item()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    // The floor turns the check absolute for gradients that vanish
    // identically, such as key biases under a softmax over keys.
    diff / na.max(nb).max(1e-3)
}

fn check(label: &str, store: &ParamStore<f64>, inputs: &[Tensor<f64>], seed: u64, build: &Build) {
    let mut probe = None;
    loss(store, inputs, &mut probe, seed, build);
    let probe_t = probe.clone().unwrap();

    let mut g = Graph::with_params(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars).unwrap();
    let p = g.input(probe_t);
    let prod = g.mul(out, p).unwrap();
    let s = g.sum(prod);
    let grads = g.backward(s).unwrap();
    let pgrads = g.param_grads(&grads, store);

    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        let mut numeric = vec![0.0; t.len()];
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            numeric[j] = (loss(store, &plus, &mut probe, seed, build) - loss(store, &minus, &mut probe, seed, build))
                / (2.0 * STEP);
        }
        let e = rel_err(&analytic, &numeric);
        assert!(e < TOL, "{label} seed {seed}: input {i} relative error {e:e}");
    }
    for id in store.ids() {
        let analytic = pgrads.get(id).data().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for j in 0..analytic.len() {
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[j] += STEP;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[j] -= STEP;
            numeric[j] =
                (loss(&plus, inputs, &mut probe, seed, build) - loss(&minus, inputs, &mut probe, seed, build)) / (2.0 * STEP);
        }
        let e = rel_err(&analytic, &numeric);
        assert!(e < TOL, "{label} seed {seed}: parameter {} relative error {e:e}", store.name(id));
    }
}

fn materialize(plan: &ParamPlan, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut store: ParamStore<f64> = plan.materialize(rng);
    // Zero-initialized tensors would hide mistakes in their gradients.
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    store
}

#[test]
fn linear_layer() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, inputs, outputs) = (rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6));
        let mut plan = ParamPlan::new();
        Linear::plan(&mut plan, "fc", inputs, outputs, 1.0);
        let store = materialize(&plan, &mut rng);
        let layer = Linear::bind(&store, "fc").unwrap();
        let x = random(&[rows, inputs], &mut rng);
        check("linear", &store, &[x], seed, &move |g, v| layer.forward(g, v[0]));
    }
}

#[test]
fn conv_layer() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..3);
        let c = rng.random_range(1..4);
        let oc = rng.random_range(1..4);
        let k = rng.random_range(1..4);
        let stride = rng.random_range(1..3);
        let pad = rng.random_range(0..3);
        let h = rng.random_range(k..k + 4);
        let w = rng.random_range(k..k + 4);
        let mut plan = ParamPlan::new();
        Conv2d::plan(&mut plan, "conv", c, oc, k, 1.0);
        let store = materialize(&plan, &mut rng);
        let layer = Conv2d::bind(&store, "conv", stride, pad).unwrap();
        let x = random(&[n, c, h, w], &mut rng);
        check("conv", &store, &[x], seed, &move |g, v| layer.forward(g, v[0]));
    }
}

#[test]
fn lstm_cell_layer() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, inputs, hidden) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..5));
        let mut plan = ParamPlan::new();
        LstmCell::plan(&mut plan, "lstm", inputs, hidden);
        let store = materialize(&plan, &mut rng);
        let cell = LstmCell::bind(&store, "lstm").unwrap();
        let x = random(&[n, inputs], &mut rng);
        let h = random(&[n, hidden], &mut rng);
        let c = random(&[n, hidden], &mut rng);
        // Two steps so gradients also flow through carried state.
        check("lstm", &store, &[x, h, c], seed, &move |g, v| {
            let (h1, c1) = cell.forward(g, v[0], v[1], v[2])?;
            let (h2, c2) = cell.forward(g, v[0], h1, c1)?;
            g.concat_last(&[h2, c2])
        });
    }
}

#[test]
fn attention_layer() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = rng.random_range(1..3);
        let d = heads * rng.random_range(1..4);
        let (n, lq, lk) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5));
        let axis = if seed % 2 == 0 { SoftmaxAxis::Keys } else { SoftmaxAxis::Queries };
        let mut plan = ParamPlan::new();
        Attention::plan(&mut plan, "attn", d);
        let store = materialize(&plan, &mut rng);
        let layer = Attention::bind(&store, "attn", heads, axis).unwrap();
        let xq = random(&[n, lq, d], &mut rng);
        let xkv = random(&[n, lk, d], &mut rng);
        check("attention", &store, &[xq, xkv], seed, &move |g, v| layer.forward(g, v[0], v[1]));
    }
}

#[test]
fn layernorm_layer() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, d) = (rng.random_range(1..4), rng.random_range(2..7));
        let mut plan = ParamPlan::new();
        LayerNorm::plan(&mut plan, "ln", d);
        let store = materialize(&plan, &mut rng);
        let layer = LayerNorm::bind(&store, "ln").unwrap();
        let x = random(&[rows, d], &mut rng);
        check("layernorm", &store, &[x], seed, &move |g, v| layer.forward(g, v[0]));
    }
}

#[test]
fn residual_mlp_layer() {
    for seed in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, d, hidden) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..6));
        let mut plan = ParamPlan::new();
        ResidualMlp::plan(&mut plan, "res", d, hidden);
        let store = materialize(&plan, &mut rng);
        let layer = ResidualMlp::bind(&store, "res").unwrap();
        let x = random(&[rows, d], &mut rng);
        check("residual", &store, &[x], seed, &move |g, v| layer.forward(g, v[0]));
    }
}

/// Shape-plumbing ops used by the policies.
#[test]
fn sequence_and_loss_ops() {
    let empty = ParamStore::<f64>::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, c) = (rng.random_range(1..3), rng.random_range(1..3));
        let patch = rng.random_range(1..4);
        let stride = rng.random_range(1..=patch);
        let h = patch + stride * rng.random_range(0..3);
        let x = random(&[n, c, h, h], &mut rng);
        check("patches", &empty, &[x], seed, &move |g, v| g.patches(v[0], patch, stride));

        let a = random(&[n, 2, 3], &mut rng);
        let b = random(&[n, 3, 3], &mut rng);
        let bias = random(&[3], &mut rng);
        check("sequence", &empty, &[a, b, bias], seed, &|g, v| {
            let s = g.concat_seq(v[0], v[1])?;
            let s = g.add_broadcast(s, v[2])?;
            let first = g.select_seq(s, 0)?;
            let mean = g.mean_seq(s)?;
            let both = g.concat_last(&[first, mean])?;
            let t = g.tanh(both);
            let e = g.exp(t);
            g.slice_last(e, 1, 4)
        });

        let logits = random(&[4, 5], &mut rng);
        let index: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
        check("policy loss", &empty, &[logits.clone(), logits], seed, &move |g, v| {
            let lp = g.log_softmax(v[0]);
            let picked = g.gather(lp, &index)?;
            let old = g.log_softmax(v[1]);
            let old = g.gather(old, &index)?;
            let delta = g.sub(picked, old)?;
            let ratio = g.exp(delta);
            let clipped = g.clamp(ratio, 0.8, 1.2);
            let m = g.minimum(ratio, clipped)?;
            let p = g.exp(lp);
            let ent = g.mul(p, lp)?;
            let ent = g.sum_last(ent);
            let sq = g.square(ent);
            let sq = g.scale(sq, 0.5);
            let both = g.add(m, sq)?;
            let s = g.add_scalar(both, 1.0);
            let r = g.reshape(s, &[2, 2])?;
            let r = g.relu(r);
            let m = g.mean(r);
            g.reshape(m, &[1])
        });

        let seq = random(&[3, 4], &mut rng);
        check("broadcast", &empty, &[seq], seed, &|g, v| {
            let b = g.broadcast_batch(v[0], 2)?;
            Ok(g.sigmoid(b))
        });
    }
}

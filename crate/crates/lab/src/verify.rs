//! Registry of invariant and property checks run by `crope verify`. Each
//! check reports the measured quantity against its allowed bound.

use std::f64::consts::{LN_2, SQRT_2};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crope_core::autodiff::{grad_check, Graph, ParamId, ParamStore, Var};
use crope_core::layers::block_linear::{count_params, tying_violation};
use crope_core::layers::complex_oracle::{to_complex, to_real};
use crope_core::layers::pauli::{nearest_tied, reconstruct, tied_block, SIGMA};
use crope_core::layers::{
    complex_oracle_forward, pauli_decompose, BlockLinear, RmsNorm, SwigluFfn,
};
use crope_core::model::{build_model, param_audit, Mode, Model, ModelConfig};
use crope_core::rng::{streams, SplitRng};
use crope_core::rope::construction::argmax;
use crope_core::rope::membership::reflection_task;
use crope_core::rope::{
    apply_rotation_real, attention_profile, build_shift_construction, crope_membership_check,
    delta_kernel, rotation_matrix, score_complex, score_rope, RopeConfig,
};
use crope_core::tensor::matmul;
use crope_core::train::{
    detokenize, evaluate, lr_at, make_batches, tokenize_bytes, toy_task_generate, AdamW, Optimizer,
    ToyTaskSpec, TrainConfig, Trainer,
};
use crope_core::{Result, Tensor};

pub const MODULES: [&str; 5] = [
    "autodiff-core",
    "structured-layers",
    "rope-math",
    "model",
    "training",
];

/// Options that alter checks on purpose.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hooks {
    /// Perturbs one entry of a tied weight before the tying check.
    pub corrupt_tied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    /// Pass when `measured <= allowed`.
    AtMost(f64),
    /// Pass when `measured >= allowed`.
    AtLeast(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub measured: f64,
    pub bound: Bound,
    pub note: String,
}

impl Outcome {
    fn at_most(measured: f64, allowed: f64) -> Self {
        Self {
            measured,
            bound: Bound::AtMost(allowed),
            note: String::new(),
        }
    }

    fn at_least(measured: f64, allowed: f64) -> Self {
        Self {
            measured,
            bound: Bound::AtLeast(allowed),
            note: String::new(),
        }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn pass(&self) -> bool {
        match self.bound {
            Bound::AtMost(a) => self.measured <= a,
            Bound::AtLeast(a) => self.measured >= a,
        }
    }
}

pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub seed: u64,
    pub run: fn(&mut ChaCha8Rng, Hooks) -> Result<Outcome>,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: &'static str,
    pub seed: u64,
    pub outcome: std::result::Result<Outcome, String>,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        self.outcome.as_ref().is_ok_and(Outcome::pass)
    }

    pub fn line(&self) -> String {
        let tag = if self.pass() { "PASS" } else { "FAIL" };
        let head = format!(
            "{tag} {:<17} {:<28} seed={}",
            self.module, self.name, self.seed
        );
        match &self.outcome {
            Ok(o) => {
                let (rel, a) = match o.bound {
                    Bound::AtMost(a) => ("<=", a),
                    Bound::AtLeast(a) => (">=", a),
                };
                let note = if o.note.is_empty() {
                    String::new()
                } else {
                    format!("  ({})", o.note)
                };
                format!(
                    "{head} measured={:.3e} allowed{rel}{a:.3e}{note}",
                    o.measured
                )
            }
            Err(e) => format!("{head} error: {e}"),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::new(shape, uniform(rng, shape.iter().product())).expect("shape matches data")
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn bit_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()) {
        0.0
    } else {
        max_diff(a, b).max(f64::MIN_POSITIVE)
    }
}

// autodiff-core

fn matmul_oracle(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]])?);
    let b = g.input(Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]])?);
    let c = g.matmul(a, b)?;
    Ok(Outcome::at_most(
        max_diff(g.value(c).data(), &[19.0, 22.0, 43.0, 50.0]),
        0.0,
    ))
}

fn softmax_rows(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let cols = rng.random_range(1..40);
        let scale = [1.0, 30.0, 1000.0][rng.random_range(0..3)];
        let data: Vec<f64> = uniform(rng, 8 * cols).iter().map(|x| x * scale).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(&[8, cols], data)?);
        let y = g.softmax(x)?;
        for row in g.value(y).data().chunks(cols) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok(Outcome::at_most(worst, 1e-12))
}

fn softmax_closed_form(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_rows(&[&[0.0, 3f64.ln()], &[1000.0, 1000.0]])?);
    let y = g.softmax(x)?;
    Ok(Outcome::at_most(
        max_diff(g.value(y).data(), &[0.25, 0.75, 0.5, 0.5]),
        1e-12,
    ))
}

fn cross_entropy_closed_form(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_rows(&[&[0.0, 3f64.ln()], &[0.0, 0.0]])?);
    let l = g.cross_entropy(x, &[1, 0])?;
    let want = (-(0.75f64.ln()) + LN_2) / 2.0;
    Ok(Outcome::at_most((g.value(l).data()[0] - want).abs(), 1e-12))
}

/// Touches every differentiable op the model uses.
fn composite(
    g: &mut Graph<f64>,
    s: &ParamStore<f64>,
    ids: &[usize],
    targets: &[usize],
) -> Result<Var> {
    let (batch, seq, heads) = (2, 3, 2);
    let table = g.param(s, ParamId(0));
    let x = g.gather_rows(table, ids)?;
    let tied = g.param(s, ParamId(1));
    let wq = g.blocks(tied, true)?;
    let untied = g.param(s, ParamId(2));
    let wk = g.blocks(untied, false)?;
    let q = g.linear(x, wq)?;
    let k = g.linear(x, wk)?;
    let q = g.split_heads(q, batch, seq, heads)?;
    let k = g.split_heads(k, batch, seq, heads)?;
    let q = g.rms_normalize(q, 1e-6);
    let gain = g.param(s, ParamId(3));
    let group: Vec<usize> = (0..batch * heads * seq)
        .map(|r| (r / seq) % heads)
        .collect();
    let q = g.scale_rows(q, gain, group)?;
    let cos: Vec<f64> = (0..seq * 2).map(|i| (0.7 * i as f64).cos()).collect();
    let sin: Vec<f64> = (0..seq * 2).map(|i| (0.7 * i as f64).sin()).collect();
    let q = g.rotate(q, cos.clone(), sin.clone(), seq)?;
    let kr = g.rotate(k, cos, sin, seq)?;
    let sc = g.bmm(q, kr, true)?;
    let sc = g.scale(sc, 0.5);
    let sc = g.causal_mask(sc)?;
    let att = g.softmax(sc)?;
    let o = g.bmm(att, k, false)?;
    let o = g.merge_heads(o, batch, seq, heads)?;
    let h = g.add(o, x)?;
    let cg = g.param(s, ParamId(4));
    let h = g.mul_cols(h, cg)?;
    let act = g.silu(h);
    let h = g.mul(h, act)?;
    let logits = g.linear(h, table)?;
    let ce = g.cross_entropy(logits, targets)?;
    let flat = g.reshape(h, &[batch * seq * 8])?;
    let m = g.mean(flat);
    let m2 = g.mul(m, m)?;
    g.add(ce, m2)
}

fn composite_store(rng: &mut ChaCha8Rng) -> Result<ParamStore<f64>> {
    let mut s = ParamStore::new();
    for (name, shape) in [
        ("table", &[5usize, 8][..]),
        ("tied", &[4, 4, 2]),
        ("untied", &[4, 4, 4]),
        ("gain", &[2]),
        ("col_gain", &[8]),
    ] {
        let t = tensor(rng, shape).map(|v| 0.8 * v);
        s.add(name, t)?;
    }
    Ok(s)
}

fn composite_grad_check(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut store = composite_store(rng)?;
        let ids: Vec<usize> = (0..6).map(|_| rng.random_range(0..5)).collect();
        let targets: Vec<usize> = (0..6).map(|_| rng.random_range(0..5)).collect();
        let r = grad_check(&mut store, 1e-5, |g, s| composite(g, s, &ids, &targets))?;
        worst = worst.max(r.max_rel_err);
    }
    Ok(Outcome::at_most(worst, 1e-4).note("100 random composites, h=1e-5"))
}

fn backward_accumulates(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut store = composite_store(rng)?;
    let ids = [0, 1, 2, 3, 4, 0];
    let once = |store: &mut ParamStore<f64>| -> Result<()> {
        let mut g = Graph::new();
        let l = composite(&mut g, store, &ids, &ids)?;
        g.backward(l, store)
    };
    store.zero_grad();
    once(&mut store)?;
    let first: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();
    once(&mut store)?;
    let mut worst: f64 = 0.0;
    for (p, g1) in store.iter().zip(&first) {
        let doubled: Vec<f64> = g1.iter().map(|x| 2.0 * x).collect();
        worst = worst.max(bit_diff(p.grad.data(), &doubled));
    }
    Ok(Outcome::at_most(worst, 0.0))
}

fn constant_grad_check(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut store = ParamStore::new();
    store.add("w", tensor(rng, &[3, 3]))?;
    let x = tensor(rng, &[2, 2]);
    let r = grad_check(&mut store, 1e-5, |g, _| {
        let v = g.input(x.clone());
        Ok(g.sum(v))
    })?;
    Ok(Outcome::at_most(r.max_rel_err, 0.0))
}

// structured-layers

fn complex_oracle(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let (i, o) = (2 * rng.random_range(1..=8), 2 * rng.random_range(1..=8));
        let mut store = ParamStore::<f64>::new();
        let layer = BlockLinear::new(&mut store, "w", i, o, true, &SplitRng::new(case))?;
        let x = tensor(rng, &[i]);
        let mut g = Graph::new();
        let xv = g.input(x.clone().reshaped(&[1, i])?);
        let y = layer.forward(&mut g, &store, xv)?;
        let oracle = complex_oracle_forward(&layer, &store, &x)?;
        worst = worst.max(max_diff(g.value(y).data(), oracle.data()));
    }
    Ok(Outcome::at_most(worst, 1e-12).note("1000 random shapes and inputs"))
}

fn tying_invariant(rng: &mut ChaCha8Rng, hooks: Hooks) -> Result<Outcome> {
    let mut store = ParamStore::<f64>::new();
    let layer = BlockLinear::new(&mut store, "w", 16, 12, true, &SplitRng::new(1))?;
    let mut opt = AdamW::new(0.9, 0.95, 1e-8, 0.1);
    for _ in 0..200 {
        let g = &mut store.get_mut(layer.free).grad;
        g.data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-1.0..1.0));
        opt.step(&mut store, 1e-2)?;
    }
    let mut w = layer.weight(&store);
    if hooks.corrupt_tied {
        w.data_mut()[0] += 1e-3;
    }
    let v = tying_violation(&w).unwrap_or(0.0);
    Ok(Outcome::at_most(v, 0.0)
        .note("W[i][j] = W[i+1][j+1], W[i+1][j] = -W[i][j+1] after 200 updates"))
}

fn dense_equivalence(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut store = ParamStore::<f64>::new();
    let layer = BlockLinear::new(&mut store, "w", 10, 6, false, &SplitRng::new(2))?;
    let dense = tensor(rng, &[6, 10]);
    layer.load_dense(&mut store, &dense)?;
    let x = tensor(rng, &[5, 10]);
    let mut g = Graph::new();
    let xv = g.input(x);
    let y = layer.forward(&mut g, &store, xv)?;
    let wv = g.input(dense.clone());
    let plain = g.linear(xv, wv)?;
    let d = bit_diff(layer.weight(&store).data(), dense.data())
        .max(bit_diff(g.value(y).data(), g.value(plain).data()));
    Ok(Outcome::at_most(d, 0.0))
}

fn pauli_tied_subspace(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let c = pauli_decompose(tied_block(a, b));
        worst = worst.max(c.c1.abs()).max(c.c3.abs());
    }
    Ok(Outcome::at_most(worst, 0.0).note("|c1|, |c3| over 1000 tied blocks"))
}

fn pauli_reconstruction(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v = uniform(rng, 4);
        let m = [[v[0], v[1]], [v[2], v[3]]];
        let r = reconstruct(pauli_decompose(m));
        worst = worst.max(max_diff(&[r[0][0], r[0][1], r[1][0], r[1][1]], &v));
    }
    Ok(Outcome::at_most(worst, 1e-15))
}

fn reflection_distance(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let (t, d) = nearest_tied(SIGMA[3]);
    let zero = t.iter().flatten().all(|&x| x == 0.0);
    Ok(
        Outcome::at_most((d - SQRT_2).abs() + if zero { 0.0 } else { 1.0 }, 1e-15)
            .note("nearest tied block to σ3 is 0 at distance √2"),
    )
}

fn param_ratio(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for i in (2..=64).step_by(2) {
        for o in (2..=64).step_by(2) {
            let r = count_params(i, o, true) as f64 / count_params(i, o, false) as f64;
            worst = worst.max((r - 0.5).abs());
        }
    }
    let big = count_params(1024, 1024, true) as f64 - 524_288.0;
    Ok(Outcome::at_most(worst + big.abs(), 0.0))
}

fn rmsnorm_closed_form(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut store = ParamStore::<f64>::new();
    let mut norm = RmsNorm::new(&mut store, "g", 2)?;
    norm.eps = 0.0;
    let mut g = Graph::new();
    let x = g.input(Tensor::from_rows(&[&[3.0, 4.0]])?);
    let y = norm.forward(&mut g, &store, x)?;
    let s = 12.5f64.sqrt();
    Ok(Outcome::at_most(
        max_diff(g.value(y).data(), &[3.0 / s, 4.0 / s]),
        1e-12,
    ))
}

fn swiglu_scalar(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut store = ParamStore::<f64>::new();
    let ffn = SwigluFfn::new(&mut store, "ffn", 1, 1, &SplitRng::new(0))?;
    store.iter_mut().for_each(|p| p.value.data_mut().fill(1.0));
    let mut g = Graph::new();
    let x = g.input(Tensor::from_rows(&[&[1.0]])?);
    let y = ffn.forward(&mut g, &store, x)?;
    let silu1 = 1.0 / (1.0 + (-1f64).exp());
    Ok(Outcome::at_most((g.value(y).data()[0] - silu1).abs(), 1e-12).note("silu(1) = 0.731059"))
}

// rope-math

fn rotation_isometry(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let cfg = RopeConfig::new(32, 5000.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let v = uniform(rng, 32);
        let m = rng.random_range(-4096..4096);
        let r = apply_rotation_real(&v, m, &cfg)?;
        let n = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max((n(&r) - n(&v)).abs());
    }
    Ok(Outcome::at_most(worst, 1e-12))
}

fn score_identity(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = 2 * rng.random_range(1..=32);
        let cfg = RopeConfig::new(d, 5000.0)?;
        let (q, k) = (uniform(rng, d), uniform(rng, d));
        let (m, n) = (rng.random_range(0..2048), rng.random_range(0..2048));
        let real = score_rope(&q, &k, m, n, &cfg)?;
        let cplx = score_complex(&to_complex(&q), &to_complex(&k), m, n, &cfg)?;
        worst = worst.max((real - cplx).abs());
    }
    Ok(Outcome::at_most(worst, 1e-10).note("1000 random q, k, m, n"))
}

fn relative_position(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let cfg = RopeConfig::new(64, 5000.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (q, k) = (uniform(rng, 64), uniform(rng, 64));
        let (m, n, s) = (
            rng.random_range(0..512),
            rng.random_range(0..512),
            rng.random_range(-256..256),
        );
        let a = score_rope(&q, &k, m, n, &cfg)?;
        let b = score_rope(&q, &k, m + s, n + s, &cfg)?;
        worst = worst.max((a - b).abs());
    }
    Ok(Outcome::at_most(worst, 1e-10))
}

fn rotation_composition(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let cfg = RopeConfig::new(16, 5000.0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (m, n) = (rng.random_range(0..256), rng.random_range(0..256));
        let rm = rotation_matrix(m, &cfg);
        let d = 16;
        let mut rmt = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                rmt[j * d + i] = rm.data()[i * d + j];
            }
        }
        let prod = matmul(&Tensor::new(&[d, d], rmt)?, &rotation_matrix(n, &cfg))?;
        worst = worst.max(max_diff(prod.data(), rotation_matrix(n - m, &cfg).data()));
    }
    Ok(Outcome::at_most(worst, 1e-12))
}

fn delta_kernel_normalization(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for d in [16, 64, 256] {
        let cfg = RopeConfig::new(d, 5000.0)?;
        worst = worst.max((delta_kernel(&cfg, 0) - 1.0).abs());
        for delta in 1..=64 {
            worst = worst.max((delta_kernel(&cfg, delta) - delta_kernel(&cfg, -delta)).abs());
        }
    }
    Ok(Outcome::at_most(worst, 0.0).note("kernel(0) = 1 and kernel even"))
}

fn shift_construction(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let cfg = RopeConfig::new(64, 5000.0)?;
    let mut misses = 0;
    for s in [1, 2] {
        let profile = attention_profile(&cfg, s, 32)?;
        misses += (8..=24).filter(|&m| argmax(&profile[m]) != m + s).count();
    }
    Ok(Outcome::at_most(misses as f64, 0.0)
        .note("argmax at m+s for m in 8..=24, s in {1, 2}, D=64"))
}

fn apply(w: &[Vec<Complex64>], x: &[Complex64]) -> Vec<Complex64> {
    w.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn appendix_membership(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let cfg = RopeConfig::new(64, 5000.0)?;
    let a: Vec<f64> = (0..16).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut ap = a.clone();
    ap.reverse();
    let c = build_shift_construction(&cfg, 1, &a, &ap)?;
    let targets = vec![apply(&c.wq, &c.x_next), apply(&c.wq, &c.x_next_next)];
    let m = crope_membership_check(&targets, &[c.x_next.clone(), c.x_next_next.clone()])?;
    Ok(Outcome::at_most(m.residual, 1e-10))
}

fn reflection_membership(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let (targets, inputs) = reflection_task();
    let m = crope_membership_check(&targets, &inputs)?;
    Ok(Outcome::at_least(m.residual, 0.1).note("unit-norm σ3 target"))
}

fn real_complex_layout(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let v = uniform(rng, 20);
    let back = to_real(&to_complex(&v));
    Ok(Outcome::at_most(bit_diff(&back, &v), 0.0))
}

// model

fn small(mode: Mode) -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_ff: 24,
        vocab_size: 11,
        max_seq_len: 64,
        mode,
        seed: 5,
        ..ModelConfig::desk()
    }
}

fn attention_savings(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let want = [0.0, 0.25, 0.375, 0.5, 0.25, 0.5];
    let mut worst: f64 = 0.0;
    for (d, h) in [(8, 2), (64, 4), (1024, 8)] {
        let base = ModelConfig {
            d_model: d,
            n_heads: h,
            d_ff: d,
            ..ModelConfig::desk()
        };
        for (mode, w) in Mode::ALL.iter().zip(want) {
            worst = worst.max((param_audit(&base.with_mode(*mode))?.attention_savings - w).abs());
        }
    }
    Ok(Outcome::at_most(worst, 0.0).note("0, 25, 37.5, 50% at d_model 8, 64, 1024"))
}

fn count_equalities(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut bad = 0;
    for cfg in [ModelConfig::desk(), ModelConfig::full_scale()] {
        let a: Vec<_> = Mode::ALL
            .iter()
            .map(|m| param_audit(&cfg.with_mode(*m)))
            .collect::<Result<_>>()?;
        let total = |m: Mode| a.iter().find(|x| x.mode == m).map(|x| x.total);
        bad += usize::from(total(Mode::CropeQk) != total(Mode::HalfRopeQk));
        bad += usize::from(total(Mode::CropeAll) != total(Mode::HalfRopeAll));
        bad += a
            .iter()
            .filter(|x| (x.embedding, x.ffn, x.norms) != (a[0].embedding, a[0].ffn, a[0].norms))
            .count();
    }
    Ok(Outcome::at_most(bad as f64, 0.0)
        .note("crope_qk = half_rope_qk, crope_all = half_rope_all, shared embedding/ffn/norms"))
}

fn causality(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for mode in Mode::ALL {
        let m = build_model::<f64>(&small(mode))?;
        let t = 10;
        let tokens: Vec<usize> = (0..t).map(|_| rng.random_range(0..11)).collect();
        let base = m.logits(&tokens, 1, t)?;
        for cut in 0..t - 1 {
            let mut p = tokens.clone();
            p[cut + 1..].iter_mut().for_each(|x| *x = (*x + 3) % 11);
            let other = m.logits(&p, 1, t)?;
            let keep = (cut + 1) * 11;
            worst = worst.max(bit_diff(&base.data()[..keep], &other.data()[..keep]));
        }
    }
    Ok(Outcome::at_most(worst, 0.0).note("all six modes"))
}

fn attention_rows(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let m = build_model::<f64>(&small(Mode::CropeQkv))?;
    let tokens: Vec<usize> = (0..12).map(|_| rng.random_range(0..11)).collect();
    let mut worst: f64 = 0.0;
    for head in 0..2 {
        let a = m.attention_map(&tokens, 0, head)?;
        for row in a.data().chunks(12) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let single = m.attention_map(&tokens[..1], 0, 0)?;
    worst = worst.max((single.data()[0] - 1.0).abs());
    Ok(Outcome::at_most(worst, 1e-6))
}

fn untied_copy(model: &Model<f64>, dense_cfg: &ModelConfig) -> Result<Model<f64>> {
    let mut dense = build_model::<f64>(dense_cfg)?;
    for (lt, ld) in model.layers.iter().zip(&dense.layers) {
        for (pt, pd) in lt.projections().iter().zip(ld.projections()) {
            pd.load_dense(&mut dense.store, &pt.weight(&model.store))?;
        }
    }
    for p in model.store.iter().filter(|p| !p.name.contains(".attn.w")) {
        if let Some(id) = dense.store.find(&p.name) {
            dense.store.get_mut(id).value = p.value.clone();
        }
    }
    Ok(dense)
}

fn mode_equivalence(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let tied = build_model::<f64>(&ModelConfig {
        n_layers: 2,
        ..small(Mode::CropeAll)
    })?;
    let dense = untied_copy(
        &tied,
        &ModelConfig {
            n_layers: 2,
            ..small(Mode::None)
        },
    )?;
    let tokens: Vec<usize> = (0..16).map(|_| rng.random_range(0..11)).collect();
    let (a, b) = (tied.logits(&tokens, 2, 8)?, dense.logits(&tokens, 2, 8)?);
    Ok(Outcome::at_most(bit_diff(a.data(), b.data()), 0.0).note("tied vs untied copy, bitwise"))
}

fn position_relativity(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let m = build_model::<f64>(&small(Mode::CropeQk))?;
    let seq: Vec<usize> = (0..6).map(|_| rng.random_range(0..11)).collect();
    let pad = 37;
    let mut long = vec![10usize; pad];
    long.extend_from_slice(&seq);
    let mut worst: f64 = 0.0;
    for head in 0..2 {
        let short = m.score_map(&seq, 0, head)?;
        let full = m.score_map(&long, 0, head)?;
        let n = long.len();
        for i in 0..seq.len() {
            for j in 0..seq.len() {
                worst = worst.max((short.at2(i, j) - full.data()[(pad + i) * n + pad + j]).abs());
            }
        }
    }
    Ok(Outcome::at_most(worst, 1e-6).note("first-layer scores under a 37-token shift"))
}

fn model_grad_check(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for mode in Mode::ALL {
        let model = build_model::<f64>(&small(mode))?;
        let inputs: Vec<usize> = (0..8).map(|_| rng.random_range(0..11)).collect();
        let targets: Vec<usize> = (0..8).map(|_| rng.random_range(0..11)).collect();
        let mut store = model.store.clone();
        let r = grad_check(&mut store, 1e-5, |g, s| {
            model.loss_with(s, g, &inputs, &targets, 2, 4)
        })?;
        worst = worst.max(r.max_rel_err);
    }
    Ok(Outcome::at_most(worst, 1e-4).note("vocab 11, d_model 16, every mode, h=1e-5"))
}

// training

fn schedule_endpoints(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let cfg = TrainConfig::default();
    let got = [
        lr_at(0, &cfg),
        lr_at(cfg.warmup_steps, &cfg),
        lr_at(cfg.steps, &cfg),
    ];
    Ok(Outcome::at_most(
        bit_diff(&got, &[0.0, cfg.lr_max, cfg.lr_min]),
        0.0,
    ))
}

fn decoupled_decay(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut store = ParamStore::new();
    let init = tensor(rng, &[3, 4]);
    store.add("w", init.clone())?;
    let mut opt = AdamW::new(0.9, 0.95, 1e-8, 0.1);
    let lr = 2e-3;
    let mut want = init.into_data();
    for _ in 0..10 {
        opt.step(&mut store, lr)?;
        want.iter_mut().for_each(|w| *w -= lr * 0.1 * *w);
    }
    Ok(
        Outcome::at_most(bit_diff(store.get(ParamId(0)).value.data(), &want), 0.0)
            .note("zero gradient, 10 steps"),
    )
}

fn optimizer_structure(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let mut model = build_model::<f64>(&small(Mode::CropeAll))?;
    let mut opt = AdamW::new(0.9, 0.95, 1e-8, 0.1);
    for _ in 0..20 {
        let inputs: Vec<usize> = (0..16).map(|_| rng.random_range(0..11)).collect();
        let targets: Vec<usize> = (0..16).map(|_| rng.random_range(0..11)).collect();
        let mut g = Graph::new();
        let l = model.loss(&mut g, &inputs, &targets, 2, 8)?;
        model.store.zero_grad();
        g.backward(l, &mut model.store)?;
        opt.step(&mut model.store, 5e-2)?;
    }
    let worst = model
        .layers
        .iter()
        .flat_map(|l| l.projections())
        .map(|p| tying_violation(&p.weight(&model.store)).unwrap_or(0.0))
        .fold(0.0, f64::max);
    Ok(Outcome::at_most(worst, 0.0).note("crope_all after 20 training steps"))
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            max_seq_len: 16,
            mode: Mode::CropeQk,
            ..ModelConfig::desk()
        },
        batch_size: 4,
        seq_len: 16,
        steps: 20,
        warmup_steps: 5,
        log_every: 5,
        eval_every: 10,
        ..TrainConfig::default()
    }
}

fn tiny_corpus() -> Vec<usize> {
    b"a rose is a rose is a rose. "
        .iter()
        .cycle()
        .take(3000)
        .map(|&b| b as usize)
        .collect()
}

fn eval_purity(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let cfg = tiny_train();
    let data = Trainer::<f64>::batches(&cfg, &tiny_corpus())?;
    let mut t = Trainer::<f64>::new(cfg, &data)?;
    t.step()?;
    let before = (t.model.store.checksum(), t.opt.checksum());
    let a = evaluate(&t.model, &data.val_batches(1))?;
    let b = evaluate(&t.model, &data.val_batches(1))?;
    let c = evaluate(&t.model, &data.val_batches(5))?;
    let changed =
        before != (t.model.store.checksum(), t.opt.checksum()) || a.to_bits() != b.to_bits();
    Ok(
        Outcome::at_most((a - c).abs() + if changed { 1.0 } else { 0.0 }, 1e-5)
            .note("checksums, repeat and regrouping"),
    )
}

fn zero_lr(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let cfg = TrainConfig {
        lr_max: 0.0,
        lr_min: 0.0,
        ..tiny_train()
    };
    let data = Trainer::<f32>::batches(&cfg, &tiny_corpus())?;
    let mut t = Trainer::<f32>::new(cfg, &data)?;
    let before = t.model.store.checksum();
    t.run(|_| Ok(()))?;
    Ok(Outcome::at_most(
        f64::from(u8::from(before != t.model.store.checksum())),
        0.0,
    ))
}

fn run_determinism(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let run = || -> Result<(Vec<u64>, u64)> {
        let cfg = tiny_train();
        let data = Trainer::<f32>::batches(&cfg, &tiny_corpus())?;
        let mut t = Trainer::<f32>::new(cfg, &data)?;
        let mut losses = Vec::new();
        t.run(|r| {
            losses.push(r.train_loss.to_bits());
            Ok(())
        })?;
        Ok((losses, t.model.store.checksum()))
    };
    Ok(Outcome::at_most(f64::from(u8::from(run()? != run()?)), 0.0).note("two runs, bitwise"))
}

fn batching_partition(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let ids: Vec<usize> = (0..5000).map(|i| i % 256).collect();
    let b = make_batches(&ids, 15, 4, 0.1, 3)?;
    let last_train = b.train.iter().max().map_or(0, |s| s + 16);
    let overlap = usize::from(last_train > b.val[0]);
    let tiny = make_batches(&ids[..18], 8, 1, 0.5, 0)?;
    let counts = usize::from((tiny.train.len(), tiny.val.len()) != (1, 1));
    Ok(Outcome::at_most((overlap + counts) as f64, 0.0))
}

fn toy_generator(_: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let spec = ToyTaskSpec::default();
    let set = toy_task_generate(&spec, 1000)?;
    let mut bad = 0;
    for i in 0..set.len() {
        let s = set.sequence(i);
        let markers = s.iter().filter(|&&x| x < 2).count();
        bad += usize::from(markers != 1 || set.targets[i] != s[set.markers[i] + set.shifts[i]]);
    }
    let next = set.shifts.iter().filter(|&&s| s == 1).count();
    bad += usize::from(next != 500);
    Ok(Outcome::at_most(bad as f64, 0.0).note("one marker, correct target, 50/50 split"))
}

fn byte_round_trip(rng: &mut ChaCha8Rng, _: Hooks) -> Result<Outcome> {
    let text: Vec<u8> = (0..4096).map(|_| rng.random()).collect();
    let ok = detokenize(&tokenize_bytes(&text)?)? == text && tokenize_bytes(b"AB")? == [65, 66];
    Ok(Outcome::at_most(f64::from(u8::from(!ok)), 0.0))
}

macro_rules! checks {
    ($($module:literal $name:literal $seed:literal $f:ident),* $(,)?) => {
        vec![$(Check { module: $module, name: $name, seed: $seed, run: $f }),*]
    };
}

pub fn registry() -> Vec<Check> {
    checks![
        "autodiff-core" "matmul-oracle" 0 matmul_oracle,
        "autodiff-core" "softmax-rows-sum" 1 softmax_rows,
        "autodiff-core" "softmax-closed-form" 0 softmax_closed_form,
        "autodiff-core" "cross-entropy-closed-form" 0 cross_entropy_closed_form,
        "autodiff-core" "composite-grad-check" 2 composite_grad_check,
        "autodiff-core" "backward-accumulates" 3 backward_accumulates,
        "autodiff-core" "constant-grad-check" 4 constant_grad_check,
        "structured-layers" "complex-oracle" 10 complex_oracle,
        "structured-layers" "tying-invariant" 11 tying_invariant,
        "structured-layers" "dense-equivalence" 12 dense_equivalence,
        "structured-layers" "pauli-tied-subspace" 13 pauli_tied_subspace,
        "structured-layers" "pauli-reconstruction" 14 pauli_reconstruction,
        "structured-layers" "reflection-distance" 0 reflection_distance,
        "structured-layers" "param-ratio" 0 param_ratio,
        "structured-layers" "rmsnorm-closed-form" 0 rmsnorm_closed_form,
        "structured-layers" "swiglu-scalar" 0 swiglu_scalar,
        "rope-math" "rotation-isometry" 20 rotation_isometry,
        "rope-math" "score-identity" 21 score_identity,
        "rope-math" "relative-position" 22 relative_position,
        "rope-math" "rotation-composition" 23 rotation_composition,
        "rope-math" "delta-kernel-normalization" 0 delta_kernel_normalization,
        "rope-math" "shift-construction" 0 shift_construction,
        "rope-math" "construction-membership" 24 appendix_membership,
        "rope-math" "reflection-membership" 0 reflection_membership,
        "rope-math" "interleaved-layout" 25 real_complex_layout,
        "model" "attention-savings" 0 attention_savings,
        "model" "count-equalities" 0 count_equalities,
        "model" "causality" 30 causality,
        "model" "attention-rows-sum" 31 attention_rows,
        "model" "mode-equivalence" 32 mode_equivalence,
        "model" "position-relativity" 33 position_relativity,
        "model" "model-grad-check" 34 model_grad_check,
        "training" "schedule-endpoints" 0 schedule_endpoints,
        "training" "decoupled-decay" 40 decoupled_decay,
        "training" "optimizer-keeps-tying" 41 optimizer_structure,
        "training" "eval-purity" 0 eval_purity,
        "training" "zero-lr" 0 zero_lr,
        "training" "run-determinism" 0 run_determinism,
        "training" "batch-partition" 0 batching_partition,
        "training" "toy-generator" 0 toy_generator,
        "training" "byte-round-trip" 42 byte_round_trip,
    ]
}

/// Runs the checks whose module is in `filters` (all when empty).
pub fn run_checks(filters: &[String], hooks: Hooks) -> Vec<CheckResult> {
    registry()
        .into_iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| f == c.module))
        .map(|c| {
            let mut rng = SplitRng::new(c.seed).stream(streams::VERIFY);
            CheckResult {
                module: c.module,
                name: c.name,
                seed: c.seed,
                outcome: (c.run)(&mut rng, hooks).map_err(|e| e.to_string()),
            }
        })
        .collect()
}

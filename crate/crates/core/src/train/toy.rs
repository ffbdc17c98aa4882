//! Token-dependent shift: one marker token per sequence says whether the
//! answer is the symbol one or two positions ahead of it. The model is read
//! out at the marker position, so a single head must attend to a position
//! chosen by the marker's value.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{build_model, Mode, Model, ModelConfig};
use crate::rng::{streams, SplitRng};
use crate::scalar::Scalar;
use crate::train::optim::{AdamW, Optimizer};
use crate::train::schedule::lr_at;
use crate::train::TrainConfig;

/// Marker asking for the symbol one position ahead.
pub const NEXT: usize = 0;
/// Marker asking for the symbol two positions ahead.
pub const NEXTNEXT: usize = 1;

/// Vocabulary `{NEXT, NEXTNEXT, symbol_0..symbol_{k-1}, PAD}`. PAD is
/// reserved and never generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyTaskSpec {
    pub symbols: usize,
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        Self {
            symbols: 8,
            seq_len: 16,
            seed: 0,
        }
    }
}

impl ToyTaskSpec {
    pub fn symbol(&self, i: usize) -> usize {
        2 + i
    }

    pub fn pad(&self) -> usize {
        2 + self.symbols
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols + 3
    }

    /// Markers sit uniformly in `0..=seq_len-3`, so both shifts have a
    /// target.
    pub fn marker_positions(&self) -> usize {
        self.seq_len - 2
    }

    fn check(&self) -> Result<()> {
        if self.seq_len < 4 {
            return Err(Error::Config(format!(
                "toy seq_len must be at least 4 to place a marker with two symbols after it, got {}",
                self.seq_len
            )));
        }
        if self.symbols < 2 {
            return Err(Error::Config("toy task needs at least two symbols".into()));
        }
        Ok(())
    }
}

/// `n` sequences with their readout targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySet {
    pub seq_len: usize,
    /// Row-major `[n, seq_len]`.
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub markers: Vec<usize>,
    /// 1 for NEXT, 2 for NEXTNEXT.
    pub shifts: Vec<usize>,
}

impl ToySet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sequence(&self, i: usize) -> &[usize] {
        &self.inputs[i * self.seq_len..(i + 1) * self.seq_len]
    }
}

/// Seeded sample source. Sample `i` of a draw is NEXT when `i` is even, so
/// every even-sized draw is exactly balanced.
pub struct ToyGenerator {
    spec: ToyTaskSpec,
    rng: ChaCha8Rng,
}

impl ToyGenerator {
    pub fn new(spec: ToyTaskSpec, stream: u64) -> Result<Self> {
        spec.check()?;
        Ok(Self {
            spec,
            rng: SplitRng::new(spec.seed).stream(stream),
        })
    }

    pub fn draw(&mut self, n: usize) -> ToySet {
        let s = self.spec;
        let mut set = ToySet {
            seq_len: s.seq_len,
            inputs: Vec::with_capacity(n * s.seq_len),
            targets: Vec::with_capacity(n),
            markers: Vec::with_capacity(n),
            shifts: Vec::with_capacity(n),
        };
        for i in 0..n {
            let shift = 1 + i % 2;
            let marker = self.rng.random_range(0..s.marker_positions());
            let start = set.inputs.len();
            for _ in 0..s.seq_len {
                let sym = self.rng.random_range(0..s.symbols);
                set.inputs.push(s.symbol(sym));
            }
            set.inputs[start + marker] = if shift == 1 { NEXT } else { NEXTNEXT };
            set.targets.push(set.inputs[start + marker + shift]);
            set.markers.push(marker);
            set.shifts.push(shift);
        }
        set
    }
}

/// `n` training-stream samples for `spec`.
pub fn toy_task_generate(spec: &ToyTaskSpec, n: usize) -> Result<ToySet> {
    Ok(ToyGenerator::new(*spec, streams::TOY_TRAIN)?.draw(n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub batch_size: usize,
    pub warmup_steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub heldout: usize,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 1,
            d_ff: 64,
            batch_size: 32,
            warmup_steps: 50,
            lr_max: 1e-2,
            lr_min: 1e-3,
            weight_decay: 0.0,
            heldout: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyResult<S> {
    pub mode: Mode,
    pub seed: u64,
    /// Held-out argmax accuracy at the marker position.
    pub accuracy: f64,
    /// Fraction of held-out sequences whose marker-row attention peaks at
    /// `marker + shift`.
    pub attention_hits: f64,
    /// Marker-row attention of the first held-out sequences (up to 8).
    pub profiles: Vec<Vec<f64>>,
    pub heldout: ToySet,
    pub final_loss: f64,
    pub model: Model<S>,
}

fn toy_model_config(mode: Mode, spec: &ToyTaskSpec, tc: &ToyTrainConfig, seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        n_heads: tc.n_heads,
        d_model: tc.d_model,
        d_ff: tc.d_ff,
        vocab_size: spec.vocab_size(),
        max_seq_len: spec.seq_len,
        mode,
        seed,
        causal: false,
        ..ModelConfig::desk()
    }
}

fn marker_rows(set: &ToySet) -> Vec<usize> {
    set.markers
        .iter()
        .enumerate()
        .map(|(i, &m)| i * set.seq_len + m)
        .collect()
}

/// Trains a one-layer model with the marker-position cross-entropy and
/// scores it on a held-out draw (stream independent of `seed`).
pub fn toy_task_train<S: Scalar>(
    mode: Mode,
    spec: &ToyTaskSpec,
    steps: usize,
    seed: u64,
    tc: &ToyTrainConfig,
) -> Result<ToyResult<S>> {
    let mcfg = toy_model_config(mode, spec, tc, seed);
    let sched = TrainConfig {
        model: mcfg.clone(),
        steps,
        warmup_steps: tc.warmup_steps.min(steps.saturating_sub(1)),
        lr_max: tc.lr_max,
        lr_min: tc.lr_min,
        weight_decay: tc.weight_decay,
        batch_size: tc.batch_size,
        seq_len: spec.seq_len,
        seed,
        ..TrainConfig::default()
    };
    sched.validate()?;
    let mut model = build_model::<S>(&mcfg)?;
    let mut opt = AdamW::new(sched.beta1, sched.beta2, sched.eps, sched.weight_decay);
    let mut gen = ToyGenerator::new(ToyTaskSpec { seed, ..*spec }, streams::TOY_TRAIN)?;
    let mut final_loss = f64::NAN;
    for step in 1..=steps {
        let set = gen.draw(tc.batch_size);
        let mut g = Graph::new();
        let (logits, _) = model.forward(&mut g, &set.inputs, set.len(), set.seq_len)?;
        let rows = g.gather_rows(logits, &marker_rows(&set))?;
        let l = g.cross_entropy(rows, &set.targets)?;
        let loss = g.value(l).data()[0].as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        model.store.zero_grad();
        g.backward(l, &mut model.store)?;
        opt.step(&mut model.store, lr_at(step, &sched))?;
        final_loss = loss;
    }

    let heldout = ToyGenerator::new(*spec, streams::TOY_HELDOUT)?.draw(tc.heldout);
    let (accuracy, attention_hits, profiles) = score(&model, &heldout)?;
    Ok(ToyResult {
        mode,
        seed,
        accuracy,
        attention_hits,
        profiles,
        heldout,
        final_loss,
        model,
    })
}

fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy, attention hit rate and leading marker-row profiles of a
/// one-layer model on `set`.
fn score<S: Scalar>(model: &Model<S>, set: &ToySet) -> Result<(f64, f64, Vec<Vec<f64>>)> {
    let t = set.seq_len;
    let heads = model.cfg.n_heads;
    let mut g = Graph::new();
    let (logits, trace) = model.forward(&mut g, &set.inputs, set.len(), t)?;
    let lv = g.value(logits);
    let v = lv.cols();
    let attn = g.value(trace.attn[0]).data();
    let (mut correct, mut hits) = (0usize, 0usize);
    let mut profiles = Vec::new();
    for i in 0..set.len() {
        let m = set.markers[i];
        let row = &lv.data()[(i * t + m) * v..(i * t + m + 1) * v];
        correct += usize::from(argmax(row) == set.targets[i]);
        // Head 0 of sequence i.
        let a = &attn[(i * heads) * t * t + m * t..(i * heads) * t * t + (m + 1) * t];
        hits += usize::from(argmax(a) == m + set.shifts[i]);
        if profiles.len() < 8 {
            profiles.push(a.iter().map(|x| x.as_f64()).collect());
        }
    }
    let n = set.len() as f64;
    Ok((correct as f64 / n, hits as f64 / n, profiles))
}

//! Pre-norm decoder with rotary attention, QK-Norm and tied embeddings.

mod audit;
mod config;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use audit::{param_audit, param_layout, ParamAudit, ParamKind};
pub use config::{Mode, ModelConfig};

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::layers::norm::RMS_EPS;
use crate::layers::{normal_param, BlockLinear, RmsNorm, SwigluFfn};
use crate::rng::SplitRng;
use crate::rope::RopeConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Standard deviation of the embedding init; small enough that the untied
/// logits start near uniform.
pub const EMBED_STD: f64 = 0.02;

/// Where the QK-Norm sits relative to the rotation. Recorded in checkpoints.
pub const QK_NORM_PLACEMENT: &str = "before_rotation";

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub attn_norm: RmsNorm,
    pub wq: BlockLinear,
    pub wk: BlockLinear,
    pub wv: BlockLinear,
    pub wo: BlockLinear,
    /// One gain per head, applied after the parameter-free RMS step.
    pub q_gain: ParamId,
    pub k_gain: ParamId,
    pub ffn_norm: RmsNorm,
    pub ffn: SwigluFfn,
}

impl Layer {
    pub fn projections(&self) -> [&BlockLinear; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    pub cfg: ModelConfig,
    pub store: ParamStore<S>,
    pub embed: ParamId,
    pub layers: Vec<Layer>,
    pub final_norm: RmsNorm,
    rope: RopeConfig,
    cos: Vec<S>,
    sin: Vec<S>,
}

/// Per-layer attention tensors recorded during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// Scaled scores `[B·H, T, T]` before masking.
    pub scores: Vec<Var>,
    /// Post-softmax weights `[B·H, T, T]`.
    pub attn: Vec<Var>,
}

pub fn build_model<S: Scalar>(cfg: &ModelConfig) -> Result<Model<S>> {
    cfg.validate()?;
    let rng = SplitRng::new(cfg.seed);
    let mut store = ParamStore::new();
    let d = cfg.d_model;
    let embed = normal_param(
        &mut store,
        "embed.weight",
        &[cfg.vocab_size, d],
        EMBED_STD,
        &rng,
    )?;
    let tied = cfg.mode.tied();
    let (qk, v) = (cfg.qk_width(), cfg.v_width());
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let p = format!("layers.{i}");
        let attn_norm = RmsNorm::new(&mut store, format!("{p}.attn_norm.gain"), d)?;
        let wq = BlockLinear::new(
            &mut store,
            format!("{p}.attn.wq.blocks"),
            d,
            qk,
            tied[0],
            &rng,
        )?;
        let wk = BlockLinear::new(
            &mut store,
            format!("{p}.attn.wk.blocks"),
            d,
            qk,
            tied[1],
            &rng,
        )?;
        let wv = BlockLinear::new(
            &mut store,
            format!("{p}.attn.wv.blocks"),
            d,
            v,
            tied[2],
            &rng,
        )?;
        let wo = BlockLinear::new(
            &mut store,
            format!("{p}.attn.wo.blocks"),
            v,
            d,
            tied[3],
            &rng,
        )?;
        let q_gain = store.add(
            format!("{p}.attn.q_norm.gain"),
            Tensor::full(&[cfg.n_heads], S::one()),
        )?;
        let k_gain = store.add(
            format!("{p}.attn.k_norm.gain"),
            Tensor::full(&[cfg.n_heads], S::one()),
        )?;
        let ffn_norm = RmsNorm::new(&mut store, format!("{p}.ffn_norm.gain"), d)?;
        let ffn = SwigluFfn::new(&mut store, &format!("{p}.ffn"), d, cfg.d_ff, &rng)?;
        layers.push(Layer {
            attn_norm,
            wq,
            wk,
            wv,
            wo,
            q_gain,
            k_gain,
            ffn_norm,
            ffn,
        });
    }
    let final_norm = RmsNorm::new(&mut store, "final_norm.gain", d)?;
    Model::assemble(cfg.clone(), store, embed, layers, final_norm)
}

impl<S: Scalar> Model<S> {
    fn assemble(
        cfg: ModelConfig,
        store: ParamStore<S>,
        embed: ParamId,
        layers: Vec<Layer>,
        final_norm: RmsNorm,
    ) -> Result<Self> {
        let rope = RopeConfig::new(cfg.head_dim_qk(), cfg.rope_base)?;
        let (cos, sin) = rope.tables(cfg.max_seq_len, 0);
        Ok(Self {
            cfg,
            store,
            embed,
            layers,
            final_norm,
            rope,
            cos,
            sin,
        })
    }

    pub fn rope(&self) -> &RopeConfig {
        &self.rope
    }

    /// Same architecture with every parameter converted to `T`.
    pub fn cast<T: Scalar>(&self) -> Result<Model<T>> {
        let mut store = ParamStore::new();
        for p in self.store.iter() {
            let id = store.add(p.name.clone(), p.value.cast())?;
            store.get_mut(id).trainable = p.trainable;
        }
        Model::assemble(
            self.cfg.clone(),
            store,
            self.embed,
            self.layers.clone(),
            self.final_norm.clone(),
        )
    }

    /// Replaces parameter values from `(name, tensor)` pairs, which must
    /// match this model's layout exactly.
    pub fn load_values(&mut self, values: Vec<(String, Tensor<S>)>) -> Result<()> {
        if values.len() != self.store.len() {
            let have: Vec<&str> = values.iter().map(|(n, _)| n.as_str()).collect();
            let missing: Vec<String> = self
                .store
                .iter()
                .filter(|p| !have.contains(&p.name.as_str()))
                .map(|p| p.name.clone())
                .collect();
            return Err(Error::Contract(format!(
                "expected {} tensors, got {}; missing: {}",
                self.store.len(),
                values.len(),
                missing.join(", ")
            )));
        }
        for (name, t) in values {
            let id = self
                .store
                .find(&name)
                .ok_or_else(|| Error::Contract(format!("unexpected tensor {name}")))?;
            let p = self.store.get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(Error::Contract(format!(
                    "tensor {name}: shape {:?} does not match expected {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t;
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[usize], batch: usize, seq: usize) -> Result<()> {
        if batch == 0 || seq == 0 {
            return Err(Error::Empty("token batch"));
        }
        if tokens.len() != batch * seq {
            return Err(Error::Dimension {
                op: "forward",
                lhs: alloc::vec![tokens.len()],
                rhs: alloc::vec![batch, seq],
            });
        }
        if seq > self.cfg.max_seq_len {
            return Err(Error::Index {
                what: "sequence length",
                index: seq,
                bound: self.cfg.max_seq_len + 1,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::Index {
                what: "token id",
                index: bad,
                bound: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    /// Logits `[B·T, V]` for row-major `tokens[B×T]`.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        tokens: &[usize],
        batch: usize,
        seq: usize,
    ) -> Result<(Var, Trace)> {
        self.forward_with(&self.store, g, tokens, batch, seq)
    }

    /// [`forward`](Self::forward) reading parameter values from `store`,
    /// which must share this model's layout.
    pub fn forward_with(
        &self,
        store: &ParamStore<S>,
        g: &mut Graph<S>,
        tokens: &[usize],
        batch: usize,
        seq: usize,
    ) -> Result<(Var, Trace)> {
        self.check_tokens(tokens, batch, seq)?;
        let mut trace = Trace::default();
        let table = g.param(store, self.embed);
        let mut x = g.gather_rows(table, tokens)?;
        for layer in &self.layers {
            let h = layer.attn_norm.forward(g, store, x)?;
            let a = self.attention(store, g, layer, h, batch, seq, &mut trace)?;
            x = g.add(x, a)?;
            let h = layer.ffn_norm.forward(g, store, x)?;
            let f = layer.ffn.forward(g, store, h)?;
            x = g.add(x, f)?;
        }
        let h = self.final_norm.forward(g, store, x)?;
        let logits = g.linear(h, table)?;
        Ok((logits, trace))
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        store: &ParamStore<S>,
        g: &mut Graph<S>,
        layer: &Layer,
        h: Var,
        batch: usize,
        seq: usize,
        trace: &mut Trace,
    ) -> Result<Var> {
        let heads = self.cfg.n_heads;
        let q = layer.wq.forward(g, store, h)?;
        let k = layer.wk.forward(g, store, h)?;
        let v = layer.wv.forward(g, store, h)?;
        let q = g.split_heads(q, batch, seq, heads)?;
        let k = g.split_heads(k, batch, seq, heads)?;
        let v = g.split_heads(v, batch, seq, heads)?;
        let q = self.qk_norm(store, g, q, layer.q_gain, seq)?;
        let k = self.qk_norm(store, g, k, layer.k_gain, seq)?;
        let half = self.rope.half();
        let (cos, sin) = (
            self.cos[..seq * half].to_vec(),
            self.sin[..seq * half].to_vec(),
        );
        let q = g.rotate(q, cos.clone(), sin.clone(), seq)?;
        let k = g.rotate(k, cos, sin, seq)?;
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, S::of(1.0 / (self.cfg.head_dim_qk() as f64).sqrt()));
        trace.scores.push(scores);
        let masked = if self.cfg.causal {
            g.causal_mask(scores)?
        } else {
            scores
        };
        let attn = g.softmax(masked)?;
        trace.attn.push(attn);
        let o = g.bmm(attn, v, false)?;
        let o = g.merge_heads(o, batch, seq, heads)?;
        layer.wo.forward(g, store, o)
    }

    /// Per-head RMS normalization over `head_dim` followed by the per-head
    /// gain. `x` is `[B·H, T, hd]`.
    fn qk_norm(
        &self,
        store: &ParamStore<S>,
        g: &mut Graph<S>,
        x: Var,
        gain: ParamId,
        seq: usize,
    ) -> Result<Var> {
        let heads = self.cfg.n_heads;
        let rows = g.value(x).rows();
        let n = g.rms_normalize(x, S::of(RMS_EPS));
        let gv = g.param(store, gain);
        g.scale_rows(n, gv, (0..rows).map(|r| (r / seq) % heads).collect())
    }

    /// Mean next-token cross-entropy.
    pub fn loss(
        &self,
        g: &mut Graph<S>,
        inputs: &[usize],
        targets: &[usize],
        batch: usize,
        seq: usize,
    ) -> Result<Var> {
        self.loss_with(&self.store, g, inputs, targets, batch, seq)
    }

    pub fn loss_with(
        &self,
        store: &ParamStore<S>,
        g: &mut Graph<S>,
        inputs: &[usize],
        targets: &[usize],
        batch: usize,
        seq: usize,
    ) -> Result<Var> {
        let (logits, _) = self.forward_with(store, g, inputs, batch, seq)?;
        g.cross_entropy(logits, targets)
    }

    /// Logits of a batch without keeping the tape.
    pub fn logits(&self, tokens: &[usize], batch: usize, seq: usize) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let (l, _) = self.forward(&mut g, tokens, batch, seq)?;
        Ok(g.value(l).clone())
    }

    /// Post-softmax attention `[T, T]` of one head for a single sequence.
    pub fn attention_map(&self, tokens: &[usize], layer: usize, head: usize) -> Result<Tensor<S>> {
        self.head_matrix(tokens, layer, head, false)
    }

    /// Scaled pre-mask scores `[T, T]` of one head for a single sequence.
    pub fn score_map(&self, tokens: &[usize], layer: usize, head: usize) -> Result<Tensor<S>> {
        self.head_matrix(tokens, layer, head, true)
    }

    fn head_matrix(
        &self,
        tokens: &[usize],
        layer: usize,
        head: usize,
        scores: bool,
    ) -> Result<Tensor<S>> {
        if layer >= self.cfg.n_layers {
            return Err(Error::Index {
                what: "layer",
                index: layer,
                bound: self.cfg.n_layers,
            });
        }
        if head >= self.cfg.n_heads {
            return Err(Error::Index {
                what: "head",
                index: head,
                bound: self.cfg.n_heads,
            });
        }
        let t = tokens.len();
        let mut g = Graph::new();
        let (_, trace) = self.forward(&mut g, tokens, 1, t)?;
        let v = if scores {
            trace.scores[layer]
        } else {
            trace.attn[layer]
        };
        let data = g.value(v).data()[head * t * t..(head + 1) * t * t].to_vec();
        Tensor::new(&[t, t], data)
    }
}

#[cfg(test)]
mod tests;

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Applies one update from the gradients accumulated in `store`.
pub trait Optimizer<S: Scalar> {
    fn step(&mut self, store: &mut ParamStore<S>, lr: f64) -> Result<()>;

    /// Number of updates applied so far.
    fn steps_taken(&self) -> u64;
}

/// Adaptive moments with decoupled weight decay. Decay applies to
/// parameters of rank 2 or more (projections, embeddings); gains are not
/// decayed. State lives on the stored (free) parameters only, so tied
/// layers keep their structure under any sequence of updates.
#[derive(Debug, Clone)]
pub struct AdamW<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// FNV-1a over the moment buffers and the step counter.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.t);
        for buf in self.m.iter().chain(&self.v) {
            for x in buf {
                eat(x.as_f64().to_bits());
            }
        }
        h
    }
}

impl<S: Scalar> Optimizer<S> for AdamW<S> {
    fn step(&mut self, store: &mut ParamStore<S>, lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = store
                .iter()
                .map(|p| alloc::vec![S::zero(); p.value.numel()])
                .collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return Err(Error::Contract(
                "optimizer state does not match the parameter store".into(),
            ));
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let (one, eps) = (S::one(), S::of(self.eps));
        let bc1 = S::of(1.0 - self.beta1.powi(t));
        let bc2 = S::of(1.0 - self.beta2.powi(t));
        let step = S::of(lr);
        let decay = S::of(lr * self.weight_decay);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let decays = p.value.shape().len() >= 2;
            let grad = p.grad.data();
            for (((w, &g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                if decays {
                    *w -= decay * *w;
                }
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= step * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    fn steps_taken(&self) -> u64 {
        self.t
    }
}

//! Rotary rotation in real and complex form, positional scorers and the
//! analytic attention constructions.
//!
//! Pairs are interleaved: coordinates `(2t, 2t+1)` form complex entry `t`,
//! rotated by angle `m·θ_t` at position `m`.

pub mod construction;
pub mod membership;
pub mod score;

use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use construction::{
    attention_profile, build_shift_construction, shift_score, ShiftConstruction,
};
pub use membership::{crope_membership_check, Membership};
pub use score::{delta_kernel, score_abs_pe, score_complex, score_rope, sinusoidal_pe};

pub const DEFAULT_BASE: f64 = 5000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub base: f64,
    /// `θ_t = base^(-2(t-1)/D)` for `t = 1..D/2`, stored zero-based.
    pub freqs: Vec<f64>,
}

impl RopeConfig {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rotary head_dim must be even and positive, got {head_dim}"
            )));
        }
        if !(base > 0.0 && base.is_finite()) {
            return Err(Error::Config(format!(
                "rotary base must be positive, got {base}"
            )));
        }
        let d = head_dim as f64;
        let freqs = (0..head_dim / 2)
            .map(|t| base.powf(-2.0 * t as f64 / d))
            .collect();
        Ok(Self {
            head_dim,
            base,
            freqs,
        })
    }

    /// Explicit frequency table; `base` is recorded as NaN.
    pub fn from_freqs(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::Config("empty frequency table".into()));
        }
        Ok(Self {
            head_dim: 2 * freqs.len(),
            base: f64::NAN,
            freqs,
        })
    }

    pub fn half(&self) -> usize {
        self.freqs.len()
    }

    /// Cosine and sine tables `[seq, D/2]` for positions `offset..offset+seq`.
    pub fn tables<S: Scalar>(&self, seq: usize, offset: usize) -> (Vec<S>, Vec<S>) {
        let mut cos = Vec::with_capacity(seq * self.half());
        let mut sin = Vec::with_capacity(seq * self.half());
        for p in offset..offset + seq {
            for &th in &self.freqs {
                let (s, c) = (p as f64 * th).sin_cos();
                cos.push(S::of(c));
                sin.push(S::of(s));
            }
        }
        (cos, sin)
    }
}

fn check_dim(op: &'static str, got: usize, cfg: &RopeConfig) -> Result<()> {
    if got != cfg.head_dim {
        return Err(Error::Dimension {
            op,
            lhs: alloc::vec![got],
            rhs: alloc::vec![cfg.head_dim],
        });
    }
    Ok(())
}

/// `R_m v`: rotates pair `t` by `m·θ_t`.
pub fn apply_rotation_real<S: Scalar>(v: &[S], m: i64, cfg: &RopeConfig) -> Result<Vec<S>> {
    check_dim("apply_rotation_real", v.len(), cfg)?;
    let mut out = v.to_vec();
    for (t, &th) in cfg.freqs.iter().enumerate() {
        let (s, c) = (m as f64 * th).sin_cos();
        let (s, c) = (S::of(s), S::of(c));
        let (x, y) = (v[2 * t], v[2 * t + 1]);
        out[2 * t] = x * c - y * s;
        out[2 * t + 1] = x * s + y * c;
    }
    Ok(out)
}

/// Dense `D×D` rotation matrix `R_m`.
pub fn rotation_matrix(m: i64, cfg: &RopeConfig) -> Tensor<f64> {
    let d = cfg.head_dim;
    let mut r = Tensor::zeros(&[d, d]);
    let data = r.data_mut();
    for (t, &th) in cfg.freqs.iter().enumerate() {
        let (s, c) = (m as f64 * th).sin_cos();
        let (i, j) = (2 * t, 2 * t + 1);
        data[i * d + i] = c;
        data[i * d + j] = -s;
        data[j * d + i] = s;
        data[j * d + j] = c;
    }
    r
}

//! Hand-built query projection that makes a single rotary attention head
//! attend `s` positions ahead of the query, selected by the query token.
//!
//! The complex weight has rows `[e^{-iθ_t}, e^{-2iθ_t}, e^{-iθ_t}, ...]`.
//! A "next" token embeds as `[a₁, 0, a₂, 0, ...]` and a "next-next" token
//! as `[0, a'₁, 0, a'₂, ...]`, so `q̃ = W̃x̃` equals `Σa · e^{-isθ_t}`. With
//! every key equal to `1`, the bilinear product
//! `Re[Σ_t q̃_t e^{-i(m-n)θ_t} k̃_t] = Σa · Σ_t cos((m + s - n)θ_t)` peaks
//! exactly at `n = m + s`. The Hermitian score [`score_complex`] conjugates
//! `q̃` and therefore mirrors the peak to `n = m - s`.
//!
//! [`score_complex`]: crate::rope::score_complex

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rope::RopeConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftConstruction {
    pub shift: usize,
    /// `[D/2][D/2]` complex query projection.
    pub wq: Vec<Vec<Complex64>>,
    pub x_next: Vec<Complex64>,
    pub x_next_next: Vec<Complex64>,
    /// `W̃x̃` for the selected shift divided by the shared `Σa`, i.e.
    /// `e^{-i·s·θ_t}`.
    pub q: Vec<Complex64>,
    /// All-ones key.
    pub k: Vec<Complex64>,
}

pub fn build_shift_construction(
    cfg: &RopeConfig,
    shift: usize,
    a: &[f64],
    a_prime: &[f64],
) -> Result<ShiftConstruction> {
    if !(shift == 1 || shift == 2) {
        return Err(Error::Config(format!("shift must be 1 or 2, got {shift}")));
    }
    let half = cfg.half();
    if !half.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "head_dim must be a multiple of 4, got {}",
            cfg.head_dim
        )));
    }
    let quarter = half / 2;
    if a.len() != quarter || a_prime.len() != quarter {
        return Err(Error::Dimension {
            op: "build_shift_construction",
            lhs: alloc::vec![a.len(), a_prime.len()],
            rhs: alloc::vec![quarter],
        });
    }
    let (sum, sum_p): (f64, f64) = (a.iter().sum(), a_prime.iter().sum());
    if (sum - sum_p).abs() > 1e-12 * sum.abs().max(1.0) || sum == 0.0 {
        return Err(Error::Config(format!(
            "token weights must share a non-zero sum, got {sum} and {sum_p}"
        )));
    }

    let wq: Vec<Vec<Complex64>> = cfg
        .freqs
        .iter()
        .map(|&th| {
            (0..half)
                .map(|j| Complex64::from_polar(1.0, -((j % 2 + 1) as f64) * th))
                .collect()
        })
        .collect();
    let zero = Complex64::new(0.0, 0.0);
    let mut x_next = alloc::vec![zero; half];
    let mut x_next_next = alloc::vec![zero; half];
    for t in 0..quarter {
        x_next[2 * t] = Complex64::new(a[t], 0.0);
        x_next_next[2 * t + 1] = Complex64::new(a_prime[t], 0.0);
    }
    let x = if shift == 1 { &x_next } else { &x_next_next };
    let q = apply(&wq, x).into_iter().map(|z| z / sum).collect();
    Ok(ShiftConstruction {
        shift,
        wq,
        x_next,
        x_next_next,
        q,
        k: alloc::vec![Complex64::new(1.0, 0.0); half],
    })
}

pub(crate) fn apply(w: &[Vec<Complex64>], x: &[Complex64]) -> Vec<Complex64> {
    w.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `Re[Σ_t q̃_t e^{-i(m-n)θ_t} k̃_t]` with no conjugation of `q̃`.
pub fn shift_score(q: &[Complex64], k: &[Complex64], m: i64, n: i64, cfg: &RopeConfig) -> f64 {
    let delta = (m - n) as f64;
    q.iter()
        .zip(k)
        .zip(&cfg.freqs)
        .map(|((qt, kt), &th)| (qt * Complex64::from_polar(1.0, -delta * th) * kt).re)
        .sum()
}

/// `window × window` matrix of constructed scores divided by `D/2`, rows
/// indexed by query position and columns by key position.
pub fn attention_profile(cfg: &RopeConfig, shift: usize, window: usize) -> Result<Vec<Vec<f64>>> {
    let ones = alloc::vec![1.0; cfg.half() / 2];
    let c = build_shift_construction(cfg, shift, &ones, &ones)?;
    let norm = cfg.half() as f64;
    Ok((0..window as i64)
        .map(|m| {
            (0..window as i64)
                .map(|n| shift_score(&c.q, &c.k, m, n, cfg) / norm)
                .collect()
        })
        .collect())
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

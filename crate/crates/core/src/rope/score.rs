use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rope::{apply_rotation_real, RopeConfig};
use crate::tensor::Tensor;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// `(R_m q)ᵀ (R_n k)` for already-projected `q`, `k`.
pub fn score_rope(q: &[f64], k: &[f64], m: i64, n: i64, cfg: &RopeConfig) -> Result<f64> {
    let rq = apply_rotation_real(q, m, cfg)?;
    let rk = apply_rotation_real(k, n, cfg)?;
    Ok(rq.iter().zip(&rk).map(|(a, b)| a * b).sum())
}

/// `Re[Σ_t conj(q̃_t) · e^{-i(m-n)θ_t} · k̃_t]`.
pub fn score_complex(
    q: &[Complex64],
    k: &[Complex64],
    m: i64,
    n: i64,
    cfg: &RopeConfig,
) -> Result<f64> {
    if q.len() != cfg.half() || k.len() != cfg.half() {
        return Err(Error::Dimension {
            op: "score_complex",
            lhs: alloc::vec![q.len(), k.len()],
            rhs: alloc::vec![cfg.half()],
        });
    }
    let delta = (m - n) as f64;
    Ok(q.iter()
        .zip(k)
        .zip(&cfg.freqs)
        .map(|((qt, kt), &th)| (qt.conj() * Complex64::from_polar(1.0, -delta * th) * kt).re)
        .sum())
}

/// `(2/D) Σ_t cos(Δ·θ_t)`; equals 1 at `Δ = 0`.
pub fn delta_kernel(cfg: &RopeConfig, delta: i64) -> f64 {
    let s: f64 = cfg.freqs.iter().map(|&th| (delta as f64 * th).cos()).sum();
    s / cfg.half() as f64
}

/// Sinusoidal absolute embedding `p_m`: pair `t` holds `(sin mθ_t, cos mθ_t)`.
pub fn sinusoidal_pe(m: i64, cfg: &RopeConfig) -> Vec<f64> {
    cfg.freqs
        .iter()
        .flat_map(|&th| {
            let (s, c) = (m as f64 * th).sin_cos();
            [s, c]
        })
        .collect()
}

/// `(x_m + p_m)ᵀ W_qᵀ W_k (x_n + p_n)` with sinusoidal `p`.
pub fn score_abs_pe(
    x_m: &[f64],
    x_n: &[f64],
    m: i64,
    n: i64,
    cfg: &RopeConfig,
    wq: &Tensor<f64>,
    wk: &Tensor<f64>,
) -> Result<f64> {
    let d = cfg.head_dim;
    if x_m.len() != d || x_n.len() != d || wq.shape() != [d, d] || wk.shape() != [d, d] {
        return Err(Error::Dimension {
            op: "score_abs_pe",
            lhs: alloc::vec![x_m.len(), x_n.len()],
            rhs: alloc::vec![d],
        });
    }
    let add =
        |x: &[f64], p: Vec<f64>| -> Vec<f64> { x.iter().zip(p).map(|(a, b)| a + b).collect() };
    let um = add(x_m, sinusoidal_pe(m, cfg));
    let un = add(x_n, sinusoidal_pe(n, cfg));
    let apply = |w: &Tensor<f64>, u: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| (0..d).map(|j| w.at2(i, j) * u[j]).sum())
            .collect()
    };
    let q = apply(wq, &um);
    let k = apply(wk, &un);
    Ok(q.iter().zip(&k).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::complex_oracle::{to_complex, to_real};
    use crate::rng::SplitRng;
    use core::f64::consts::FRAC_PI_2;
    use rand::Rng;

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn equal_positions_cancel() {
        let cfg = RopeConfig::new(8, 5000.0).unwrap();
        let q = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8];
        let k = [1.0, -1.0, 2.0, 0.5, 0.0, 3.0, -0.2, 0.1];
        let dot: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum();
        assert!((score_rope(&q, &k, 17, 17, &cfg).unwrap() - dot).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let cfg = RopeConfig::new(16, 5000.0).unwrap();
        let mut rng = SplitRng::new(7).stream(0);
        for _ in 0..200 {
            let (q, k) = (rand_vec(&mut rng, 16), rand_vec(&mut rng, 16));
            let (m, n, s) = (
                rng.random_range(0..300),
                rng.random_range(0..300),
                rng.random_range(-300..300),
            );
            let a = score_rope(&q, &k, m, n, &cfg).unwrap();
            let b = score_rope(&q, &k, m + s, n + s, &cfg).unwrap();
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn quarter_turn_cosine() {
        let cfg = RopeConfig::from_freqs(alloc::vec![FRAC_PI_2]).unwrap();
        let s = score_rope(&[1.0, 0.0], &[1.0, 0.0], 1, 2, &cfg).unwrap();
        assert!(s.abs() < 1e-15);
    }

    #[test]
    fn complex_examples() {
        let cfg = RopeConfig::new(2, 5000.0).unwrap();
        let q = to_complex(&[1.0, 0.0]);
        let k = to_complex(&[0.0, 1.0]);
        assert_eq!(score_complex(&q, &k, 3, 3, &cfg).unwrap(), 0.0);
        let cfg = RopeConfig::new(6, 5000.0).unwrap();
        let q = to_complex(&[1.0, 2.0, -1.0, 0.5, 3.0, 0.0]);
        let s = score_complex(&q, &q, 9, 9, &cfg).unwrap();
        assert!((s - 15.25).abs() < 1e-12);
    }

    #[test]
    fn complex_matches_real() {
        let cfg = RopeConfig::new(24, 5000.0).unwrap();
        let mut rng = SplitRng::new(8).stream(0);
        for _ in 0..1000 {
            let (q, k) = (rand_vec(&mut rng, 24), rand_vec(&mut rng, 24));
            let (m, n) = (rng.random_range(0..1024), rng.random_range(0..1024));
            let real = score_rope(&q, &k, m, n, &cfg).unwrap();
            let cplx = score_complex(&to_complex(&q), &to_complex(&k), m, n, &cfg).unwrap();
            assert!((real - cplx).abs() <= 1e-10);
            assert_eq!(to_real(&to_complex(&q)), q);
        }
    }

    #[test]
    fn kernel_is_normalized_and_even() {
        for d in [2, 16, 64, 256] {
            let cfg = RopeConfig::new(d, 5000.0).unwrap();
            assert_eq!(delta_kernel(&cfg, 0), 1.0);
            for delta in 1..40 {
                assert_eq!(delta_kernel(&cfg, delta), delta_kernel(&cfg, -delta));
            }
        }
    }

    /// Direct evaluation of the kernel maxima, frozen from an independent
    /// numpy evaluation of the same sum.
    #[test]
    fn kernel_off_peak_maxima() {
        let expect = [
            (16, 0.934_176_485_643_664_2),
            (64, 0.964_079_130_498_226_1),
            (256, 0.970_011_665_439_455_2),
        ];
        for (d, want) in expect {
            let cfg = RopeConfig::new(d, 5000.0).unwrap();
            let got = (1..=32)
                .map(|k| delta_kernel(&cfg, k))
                .fold(f64::MIN, f64::max);
            assert!((got - want).abs() < 1e-12, "D={d}: {got}");
        }
    }

    #[test]
    fn abs_pe_regimes() {
        let cfg = RopeConfig::new(8, 5000.0).unwrap();
        let eye = Tensor::identity(8);
        let x_m: Vec<f64> = (0..8).map(|i| 1e4 * (i as f64 + 1.0)).collect();
        let x_n: Vec<f64> = (0..8).map(|i| -3e3 * (i as f64 - 2.0)).collect();
        let tok: f64 = x_m.iter().zip(&x_n).map(|(a, b)| a * b).sum();
        let s = score_abs_pe(&x_m, &x_n, 3, 11, &cfg, &eye, &eye).unwrap();
        assert!(((s - tok) / tok).abs() < 1e-3);

        let zero = [0.0; 8];
        let s = score_abs_pe(&zero, &zero, 3, 11, &cfg, &eye, &eye).unwrap();
        let pp: f64 = sinusoidal_pe(3, &cfg)
            .iter()
            .zip(sinusoidal_pe(11, &cfg))
            .map(|(a, b)| a * b)
            .sum();
        assert!((s - pp).abs() < 1e-12);
        // The normalized position-only score is the δ-kernel at m - n.
        assert!((s / 4.0 - delta_kernel(&cfg, 3 - 11)).abs() < 1e-12);
    }
}

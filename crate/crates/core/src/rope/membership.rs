//! Least-squares test of whether a set of input→target pairs can be
//! produced by a single complex-linear (tied) projection.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    /// Frobenius norm of `W̃X̃ - Ỹ` at the least-squares `W̃`.
    pub residual: f64,
    /// `[n_out][n_in]` least-squares weight.
    pub weight: Vec<Vec<Complex64>>,
    pub rank: usize,
    /// Fewer independent inputs than `min(patterns, n_in)`.
    pub rank_deficient: bool,
}

fn dot(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

fn norm(u: &[Complex64]) -> f64 {
    u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `inputs[p]` and `targets[p]` are the complex input and target of
/// pattern `p`.
pub fn crope_membership_check(
    targets: &[Vec<Complex64>],
    inputs: &[Vec<Complex64>],
) -> Result<Membership> {
    let patterns = inputs.len();
    if patterns == 0 || targets.len() != patterns {
        return Err(Error::Dimension {
            op: "crope_membership_check",
            lhs: vec![targets.len()],
            rhs: vec![patterns],
        });
    }
    let n_in = inputs[0].len();
    let n_out = targets[0].len();
    if inputs.iter().any(|x| x.len() != n_in) || targets.iter().any(|y| y.len() != n_out) {
        return Err(Error::Shape("ragged patterns".into()));
    }

    // Rows of X̃ (one per input coordinate) as vectors over patterns; the
    // rows of W̃X̃ range over their complex span.
    let rows: Vec<Vec<Complex64>> = (0..n_in)
        .map(|j| inputs.iter().map(|x| x[j]).collect())
        .collect();
    let scale = rows.iter().map(|r| norm(r)).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);

    // Modified Gram-Schmidt with one re-orthogonalization pass; `coef[k]`
    // expresses basis vector k in terms of the original rows.
    let zero = Complex64::new(0.0, 0.0);
    let mut basis: Vec<Vec<Complex64>> = Vec::new();
    let mut coef: Vec<Vec<Complex64>> = Vec::new();
    for (j, row) in rows.iter().enumerate() {
        let mut v = row.clone();
        let mut c = vec![zero; n_in];
        c[j] = Complex64::new(1.0, 0.0);
        for _ in 0..2 {
            for (e, ce) in basis.iter().zip(&coef) {
                let p = dot(e, &v);
                v.iter_mut().zip(e).for_each(|(vi, ei)| *vi -= p * ei);
                c.iter_mut().zip(ce).for_each(|(ci, cei)| *ci -= p * cei);
            }
        }
        let nv = norm(&v);
        if nv > tol {
            v.iter_mut().for_each(|z| *z /= nv);
            c.iter_mut().for_each(|z| *z /= nv);
            basis.push(v);
            coef.push(c);
        }
    }

    let mut residual2 = 0.0;
    let mut weight = vec![vec![zero; n_in]; n_out];
    for (o, w_row) in weight.iter_mut().enumerate() {
        let y: Vec<Complex64> = targets.iter().map(|t| t[o]).collect();
        let mut r = y.clone();
        for (e, ce) in basis.iter().zip(&coef) {
            let p = dot(e, &y);
            r.iter_mut().zip(e).for_each(|(ri, ei)| *ri -= p * ei);
            w_row
                .iter_mut()
                .zip(ce)
                .for_each(|(wi, cei)| *wi += p * cei);
        }
        residual2 += r.iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    let rank = basis.len();
    Ok(Membership {
        residual: residual2.sqrt(),
        weight,
        rank,
        rank_deficient: rank < patterns.min(n_in),
    })
}

/// Unit-norm reflection task: the inputs `1` and `i` must map to their
/// conjugates (`σ₃` on the interleaved pair).
pub fn reflection_task() -> (Vec<Vec<Complex64>>, Vec<Vec<Complex64>>) {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    let inputs = vec![
        vec![Complex64::new(1.0, 0.0)],
        vec![Complex64::new(0.0, 1.0)],
    ];
    let targets = vec![vec![Complex64::new(s, 0.0)], vec![Complex64::new(0.0, -s)]];
    (targets, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rope::construction::{apply, build_shift_construction};
    use crate::rope::RopeConfig;

    #[test]
    fn appendix_targets_are_reachable() {
        let cfg = RopeConfig::new(64, 5000.0).unwrap();
        let a: Vec<f64> = (0..16).map(|t| 1.0 + 0.1 * t as f64).collect();
        let c = build_shift_construction(&cfg, 1, &a, &a).unwrap();
        let targets = vec![apply(&c.wq, &c.x_next), apply(&c.wq, &c.x_next_next)];
        let inputs = vec![c.x_next.clone(), c.x_next_next.clone()];
        let m = crope_membership_check(&targets, &inputs).unwrap();
        assert!(m.residual <= 1e-10, "{}", m.residual);
        assert_eq!(m.rank, 2);
        // The fitted weight reproduces the targets.
        for (x, y) in inputs.iter().zip(&targets) {
            let fit = apply(&m.weight, x);
            let err: f64 = fit
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-10);
        }
    }

    #[test]
    fn reflection_is_unreachable() {
        let (targets, inputs) = reflection_task();
        let m = crope_membership_check(&targets, &inputs).unwrap();
        assert!(m.residual >= 0.1);
        assert!((m.residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_targets_give_zero_weight() {
        let inputs = vec![vec![Complex64::new(1.0, 2.0), Complex64::new(0.5, 0.0)]; 3];
        let targets = vec![vec![Complex64::new(0.0, 0.0); 2]; 3];
        let m = crope_membership_check(&targets, &inputs).unwrap();
        assert_eq!(m.residual, 0.0);
        assert!(m.weight.iter().flatten().all(|z| z.norm() == 0.0));
        assert!(m.rank_deficient);
        assert_eq!(m.rank, 1);
    }
}

//! Independent complex-arithmetic route for tied [`BlockLinear`] layers.
//!
//! A real vector of even length is read as complex entries
//! `(v[2t], v[2t+1])`; tied block `(a, b)` is the complex weight `a - b·i`.

use alloc::vec::Vec;

use num_complex::Complex;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::layers::BlockLinear;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Interleaved real vector to complex entries.
pub fn to_complex<S: Scalar>(v: &[S]) -> Vec<Complex<S>> {
    v.chunks_exact(2)
        .map(|p| Complex::new(p[0], p[1]))
        .collect()
}

/// Complex entries back to the interleaved real layout.
pub fn to_real<S: Scalar>(z: &[Complex<S>]) -> Vec<S> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

/// Complex weight matrix `[out/2][in/2]` of a tied layer.
pub fn complex_weight<S: Scalar>(
    layer: &BlockLinear,
    store: &ParamStore<S>,
) -> Result<Vec<Vec<Complex<S>>>> {
    if !layer.tied {
        return Err(Error::Contract(
            "complex oracle needs a tied BlockLinear".into(),
        ));
    }
    let free = store.get(layer.free).value.data();
    let ib = layer.in_dim / 2;
    Ok(free
        .chunks_exact(2 * ib)
        .map(|row| {
            row.chunks_exact(2)
                .map(|ab| Complex::new(ab[0], -ab[1]))
                .collect()
        })
        .collect())
}

/// `ỹ = W̃·x̃` in complex arithmetic, returned in interleaved real form.
pub fn complex_oracle_forward<S: Scalar>(
    layer: &BlockLinear,
    store: &ParamStore<S>,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let w = complex_weight(layer, store)?;
    if x.numel() != layer.in_dim {
        return Err(Error::Dimension {
            op: "complex_oracle_forward",
            lhs: x.shape().to_vec(),
            rhs: alloc::vec![layer.in_dim],
        });
    }
    let xc = to_complex(x.data());
    let y: Vec<Complex<S>> = w
        .iter()
        .map(|row| {
            row.iter()
                .zip(&xc)
                .fold(Complex::new(S::zero(), S::zero()), |acc, (a, b)| {
                    acc + a * b
                })
        })
        .collect();
    Tensor::new(&[layer.out_dim], to_real(&y))
}

//! Projection and normalization layers.

pub mod block_linear;
pub mod complex_oracle;
pub mod ffn;
pub mod norm;
pub mod pauli;

use alloc::string::String;

use rand_distr::{Distribution, Normal};

pub use block_linear::BlockLinear;
pub use complex_oracle::complex_oracle_forward;
pub use ffn::SwigluFfn;
pub use norm::RmsNorm;
pub use pauli::{pauli_decompose, PauliCoeffs};

use crate::autodiff::{ParamId, ParamStore};
use crate::error::Result;
use crate::rng::SplitRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Registers a `normal(0, std)` parameter drawn from its own stream.
pub(crate) fn normal_param<S: Scalar>(
    store: &mut ParamStore<S>,
    name: impl Into<String>,
    shape: &[usize],
    std: f64,
    rng: &SplitRng,
) -> Result<ParamId> {
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut r = rng.stream(store.len() as u64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| S::of(normal.sample(&mut r))).collect();
    store.add(name, Tensor::new(shape, data)?)
}

use alloc::string::String;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const RMS_EPS: f64 = 1e-6;

/// `x / sqrt(mean(x²) + eps) · gain` over the last axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsNorm {
    pub dim: usize,
    pub gain: ParamId,
    pub eps: f64,
}

impl RmsNorm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: impl Into<String>,
        dim: usize,
    ) -> Result<Self> {
        let gain = store.add(name, Tensor::full(&[dim], S::one()))?;
        Ok(Self {
            dim,
            gain,
            eps: RMS_EPS,
        })
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var> {
        if g.value(x).cols() != self.dim {
            return Err(Error::Dimension {
                op: "rmsnorm",
                lhs: g.shape(x).to_vec(),
                rhs: alloc::vec![self.dim],
            });
        }
        let n = g.rms_normalize(x, S::of(self.eps));
        let gain = g.param(store, self.gain);
        g.mul_cols(n, gain)
    }
}

use alloc::format;

use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::Result;
use crate::layers::normal_param;
use crate::rng::SplitRng;
use crate::scalar::Scalar;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// `down(silu(gate(x)) ⊙ up(x))` with dense, bias-free projections.
#[derive(Debug, Clone, PartialEq)]
pub struct SwigluFfn {
    pub d_model: usize,
    pub d_ff: usize,
    pub gate: ParamId,
    pub up: ParamId,
    pub down: ParamId,
}

impl SwigluFfn {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d_model: usize,
        d_ff: usize,
        rng: &SplitRng,
    ) -> Result<Self> {
        let s_in = (1.0 / d_model as f64).sqrt();
        let s_ff = (1.0 / d_ff as f64).sqrt();
        let gate = normal_param(
            store,
            format!("{prefix}.gate.weight"),
            &[d_ff, d_model],
            s_in,
            rng,
        )?;
        let up = normal_param(
            store,
            format!("{prefix}.up.weight"),
            &[d_ff, d_model],
            s_in,
            rng,
        )?;
        let down = normal_param(
            store,
            format!("{prefix}.down.weight"),
            &[d_model, d_ff],
            s_ff,
            rng,
        )?;
        Ok(Self {
            d_model,
            d_ff,
            gate,
            up,
            down,
        })
    }

    pub fn count_params(&self) -> usize {
        3 * self.d_model * self.d_ff
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        x: Var,
    ) -> Result<Var> {
        let wg = g.param(store, self.gate);
        let wu = g.param(store, self.up);
        let wd = g.param(store, self.down);
        let gate = g.linear(x, wg)?;
        let gate = g.silu(gate);
        let up = g.linear(x, wu)?;
        let h = g.mul(gate, up)?;
        g.linear(h, wd)
    }
}

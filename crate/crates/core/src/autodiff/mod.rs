//! Reverse-mode automatic differentiation over dense tensors.

pub mod gradcheck;
mod graph;
mod param;

pub use gradcheck::{grad_check, rel_err, GradCheckReport};
pub use graph::{Graph, Var};
pub use param::{ParamId, ParamStore, Parameter};

#[cfg(test)]
mod tests;

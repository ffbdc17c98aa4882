//! Rotary positional embedding and its complex-linear variant (CRoPE).
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. It carries the reverse-mode autodiff tape, the 2×2-block tied
//! projection layer, rotary math and analytic constructions, the decoder
//! model with all six placement modes, and the optimizer/data/toy-task
//! pieces of the training loop. File formats and the CLI live in
//! `crope-lab`.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod layers;
pub mod model;
pub mod rng;
pub mod rope;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

//! File formats, experiment drivers and the `crope` command line around
//! `crope-core`.

pub mod audit;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod run;
pub mod toy;
pub mod verify;

pub use error::{LabError, Result};

// Training allocates and frees activation-sized buffers every step; the
// system allocator hands those back to the kernel each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

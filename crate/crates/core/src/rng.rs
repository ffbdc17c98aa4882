//! Seeded, splittable random streams.
//!
//! Every consumer of randomness (parameter init, batch order, toy data)
//! asks the root for its own ChaCha stream by id, so adding a consumer
//! never shifts the numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids reserved for the training pipeline. Parameter streams use
/// the parameter's index in the store.
pub mod streams {
    pub const BATCH_ORDER: u64 = 1 << 40;
    pub const TOY_TRAIN: u64 = (1 << 40) + 1;
    pub const TOY_HELDOUT: u64 = (1 << 40) + 2;
    pub const VERIFY: u64 = (1 << 40) + 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRng {
    seed: u64,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `stream`, positioned at word 0.
    pub fn stream(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

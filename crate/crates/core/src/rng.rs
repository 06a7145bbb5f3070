//! Seeding conventions for parallel work.
//!
//! Every randomized routine takes an explicit `u64` seed and uses a
//! counter-based generator, so results are reproducible and independent of
//! thread scheduling. Work units (models, replications) derive their own
//! seeds from the run seed and their index.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Seed for the work unit at `index` under a run-level `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}

/// The crate-wide generator.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

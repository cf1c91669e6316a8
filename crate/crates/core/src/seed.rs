//! Deterministic seed derivation for parallel sampling.
//!
//! Every sample in a run draws from its own generator seeded by
//! `derive(run_seed, index)`. Outputs are then independent of worker count
//! and scheduling: sample `i` sees the same stream whether it is produced
//! sequentially or on any thread.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; full-period mixing of a 64-bit counter.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed for item `index` of a run.
pub fn derive(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Generator for item `index` of a run seeded with `seed`.
pub fn rng_for(seed: u64, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(seed, index))
}

//! Seeded randomness.
//!
//! All stochastic behaviour (initialization, dropout masks, shuffling,
//! synthetic data) draws from ChaCha8, a counter-based stream cipher
//! generator. Given the same 64-bit seed the stream is identical on every
//! platform, which is what makes training runs reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeedRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream derived from `seed` for a named purpose.
pub fn stream(seed: u64, purpose: u64) -> SeedRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

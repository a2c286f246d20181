//! Seeded, splittable randomness. Every stochastic routine takes one of
//! these explicitly so runs are reproducible from a single `u64` seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type IspRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> IspRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent child stream derived from `seed`; distinct `stream` values
/// never overlap.
pub fn stream(seed: u64, stream: u64) -> IspRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits a fresh generator off `parent`, advancing it by one draw.
pub fn split(parent: &mut IspRng) -> IspRng {
    ChaCha8Rng::seed_from_u64(parent.next_u64())
}

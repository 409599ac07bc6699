//! Seeded randomness. Every random draw in the library comes from a
//! `ChaCha8Rng` created here, so a seed fixes a run across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

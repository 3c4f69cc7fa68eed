//! Synthetic data and Monte Carlo studies.

pub mod config;
pub mod e2e;
pub mod insertion;
pub mod noise;
pub mod phantom;
pub mod study;
pub mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Independent stream for one trial. `salt` separates experiments sharing a
/// seed.
pub fn trial_rng(seed: u64, salt: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(trial as u64);
    rng
}

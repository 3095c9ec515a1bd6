//! Seed derivation. Every trial owns one root seed that is split into
//! independent ChaCha streams, so controller modes that draw different
//! amounts of randomness never perturb the fish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Controller = 1,
    Fish = 2,
    Personality = 3,
}

/// SplitMix64 finalizer; used to turn (root, index) into well-mixed seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th trial of an experiment rooted at `root`.
pub fn trial_seed(root: u64, index: u64) -> u64 {
    mix(root ^ mix(index.wrapping_add(1)))
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

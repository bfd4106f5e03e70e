//! Seed derivation. Every random stream in the crate is a ChaCha8 stream
//! addressed by `(seed, stream id)`, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for item `index` under `master` (repetitions, sub-experiments).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Which Brownian motion a per-path stream drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// W2, driving the explanatory process.
    Explanatory,
    /// W1, driving X.
    State,
}

pub fn path_rng(seed: u64, path: usize, noise: Noise) -> ChaCha8Rng {
    let offset = match noise {
        Noise::Explanatory => 0,
        Noise::State => 1,
    };
    stream_rng(seed, 2 * path as u64 + offset)
}

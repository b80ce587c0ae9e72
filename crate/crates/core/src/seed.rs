//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by the user seed and a stream label, so no two consumers share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    InnerFolds,
    SubspaceDraws,
    OuterFolds,
    SynthDesign,
    SynthNoise,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::InnerFolds => 1,
            Stream::SubspaceDraws => 2,
            Stream::OuterFolds => 3,
            Stream::SynthDesign => 4,
            Stream::SynthNoise => 5,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `index`-th child of `seed` (outer folds use this).
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix(seed ^ mix(index.wrapping_add(0xA5A5_A5A5)))
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(stream.tag())))
}

//! Per-purpose random substreams derived from one root seed.
//!
//! Every consumer of randomness asks for its own stream, so changing how
//! much randomness one component draws never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Split sampling for task construction.
    Sampler,
    /// Model parameter initialization.
    Init,
    /// Synthetic corpus generation.
    Generator,
    /// Feature-hashing provider seed.
    Hash,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Sampler => 0x5341_4d50,
            Stream::Init => 0x494e_4954,
            Stream::Generator => 0x4745_4e52,
            Stream::Hash => 0x4841_5348,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for substream `index` of `stream` under `root`.
pub fn derive(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ stream.tag()) ^ index)
}

pub fn rng_for(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream, index))
}

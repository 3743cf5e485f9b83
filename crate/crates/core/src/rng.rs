//! Seed derivation and named deterministic random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Independent random streams. Each subsystem draws only from its own stream so that
/// changes in one system never perturb the draws of another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    Terrain,
    Placement,
    Creatures,
    Spawning,
    Player,
    Variants,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Terrain => 0x7465_7272,
            Stream::Placement => 0x706c_6163,
            Stream::Creatures => 0x6372_6561,
            Stream::Spawning => 0x7370_6177,
            Stream::Player => 0x706c_6179,
            Stream::Variants => 0x7661_7269,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based seed split: child seeds depend only on the parent and the index.
pub fn split_seed(parent: u64, index: u64) -> u64 {
    mix64(parent ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split_seed(seed, stream.id()))
}

/// The full set of per-system generators owned by a world.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStreams {
    pub creatures: ChaCha8Rng,
    pub spawning: ChaCha8Rng,
    pub player: ChaCha8Rng,
    pub variants: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            creatures: stream_rng(seed, Stream::Creatures),
            spawning: stream_rng(seed, Stream::Spawning),
            player: stream_rng(seed, Stream::Player),
            variants: stream_rng(seed, Stream::Variants),
        }
    }
}

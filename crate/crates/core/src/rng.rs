//! Seed derivation. Every random decision in a run draws from a stream
//! derived from the run seed, a stream tag, and an index, so results do
//! not depend on call order or thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_INIT: u64 = 0x50415241;
pub const TAG_SPLIT: u64 = 0x53504c49;
pub const TAG_GRAPH: u64 = 0x47524150;
pub const TAG_SHUFFLE: u64 = 0x53485546;
pub const TAG_NEGATIVES: u64 = 0x4e454753;
pub const TAG_DROPOUT: u64 = 0x44524f50;
pub const TAG_EMBED: u64 = 0x454d4245;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for (run seed, stream tag, index).
pub fn subseed(seed: u64, tag: u64, idx: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_add(mix64(idx))))
}

/// Seeded generator with a platform-stable stream.
pub fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

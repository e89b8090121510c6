//! Seed derivation. Every random stream is a pure function of the run seed and
//! a few integer coordinates, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_SHUFFLE: u64 = 2;
pub const STREAM_DROPOUT: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: u64, coords: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream, coords))
}

/// Derived 64-bit seed for a sub-stream, e.g. one sample's dropout masks.
pub fn mix(seed: u64, stream: u64, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream));
    for &c in coords {
        h = splitmix64(h ^ c);
    }
    h
}

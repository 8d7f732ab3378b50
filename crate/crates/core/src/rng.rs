//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a 64-bit
//! value obtained with [`stable_hash`]. The hash is the SplitMix64 finalizer
//! applied twice:
//!
//! ```text
//! mix(z)            = z ^= z >> 30; z *= 0xbf58476d1ce4e5b9;
//!                     z ^= z >> 27; z *= 0x94d049bb133111eb; z ^ (z >> 31)
//! stable_hash(a, b) = mix(mix(a + 0x9e3779b97f4a7c15) ^ b)      (wrapping)
//! ```
//!
//! so seeds are portable across implementations and independent of thread
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Portable 64-bit mixing of a parent seed with an index.
pub fn stable_hash(seed: u64, index: u64) -> u64 {
    mix(mix(seed.wrapping_add(GOLDEN)) ^ index)
}

/// Domain tags so that streams for different purposes never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Geometry = 1,
    Emitters = 2,
    Photons = 3,
    Noise = 4,
    Tile = 5,
    Split = 6,
    Sample = 7,
}

/// Seed of the substream `tag` of `seed`.
pub fn substream(seed: u64, tag: Stream) -> u64 {
    stable_hash(seed, tag as u64)
}

pub fn rng_from(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

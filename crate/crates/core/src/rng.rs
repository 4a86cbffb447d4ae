//! Seeded random streams.
//!
//! Every stochastic decision in the simulator draws from a ChaCha8 stream
//! (`rand_chacha::ChaCha8Rng`) whose 64-bit seed is derived by [`split`]
//! from the run seed and a tuple of coordinates (stream tag, node id, tick,
//! ...). ChaCha8 output is specified bit-for-bit and does not depend on the
//! platform, so identical seeds give identical runs everywhere.
//!
//! Because each (node, tick) pair owns its own stream, the order in which
//! nodes are visited never changes what a node draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every stream.
pub type SimRng = ChaCha8Rng;

/// Stream tags. Values are part of the reproducibility contract.
pub mod stream {
    pub const TOPOLOGY: u64 = 0x01;
    pub const ROLES: u64 = 0x02;
    pub const LATENCY: u64 = 0x03;
    pub const PARTITION: u64 = 0x04;
    pub const LEAVES: u64 = 0x05;
    pub const PRODUCTION: u64 = 0x10;
    pub const POLICY: u64 = 0x11;
    pub const INITIAL_POLICY: u64 = 0x12;
    pub const MISMATCH: u64 = 0x20;
    pub const RACE: u64 = 0x21;
    pub const SURPLUS: u64 = 0x30;
    pub const GAME: u64 = 0x40;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a list of coordinates.
///
/// `split(s, &[a, b])` absorbs each coordinate with a SplitMix64 round, so
/// distinct coordinate tuples give unrelated seeds.
pub fn split(seed: u64, coords: &[u64]) -> u64 {
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    for (i, &c) in coords.iter().enumerate() {
        h = mix64(h ^ mix64(c.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 2))));
    }
    h
}

/// A generator seeded from `split(seed, coords)`.
pub fn stream_rng(seed: u64, coords: &[u64]) -> SimRng {
    SimRng::seed_from_u64(split(seed, coords))
}

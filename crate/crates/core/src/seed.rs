//! Counter-based seed derivation.
//!
//! Every generated sample gets its own seed computed from the master seed and
//! its index, so samples can be produced in any order or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under `master`.
pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(master ^ mix64(stream)).wrapping_add(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named streams, kept distinct so e.g. the scene and camera of one sample
/// never share a seed.
pub mod stream {
    pub const SCENE: u64 = 1;
    pub const CAMERA: u64 = 2;
    pub const TEXTURE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SHUFFLE: u64 = 5;
}

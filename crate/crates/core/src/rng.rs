//! Seed derivation and the deterministic generator used everywhere in the simulator.
//!
//! Every random draw in a trial descends from one master seed through
//! [`derive_seed`], a counter-based splitter (SplitMix64 finalizer over the
//! parent seed and a stream label). Streams never share state, so adding draws
//! to one subsystem does not shift another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator type for all simulation randomness.
pub type SimRng = ChaCha8Rng;

/// Stream labels. Keeping them in one place avoids accidental collisions.
pub mod stream {
    pub const TRIAL: u64 = 0x7452_4941_4c00_0001;
    pub const MICROSCOPE: u64 = 0x4d49_4352_4f00_0002;
    pub const BSCAN: u64 = 0x4253_4341_4e00_0003;
    pub const ARTIFACT: u64 = 0x4152_5449_4600_0004;
    pub const SCENE: u64 = 0x5343_454e_4500_0005;
    pub const OPERATOR: u64 = 0x4f50_4552_4100_0006;
    pub const SESSION: u64 = 0x5345_5353_4900_0007;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(parent, stream, index)`.
pub fn derive_seed(parent: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ stream).wrapping_add(index))
}

pub fn rng_for(parent: u64, stream: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(parent, stream, index))
}

/// 64-bit FNV-1a, used for frame and config digests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

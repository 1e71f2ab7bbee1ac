//! Seeded random streams.
//!
//! Every random decision derives from one master seed through a named
//! sub-stream, so adding a consumer never perturbs the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream identifiers. The low 32 bits are free for an index (repetition,
/// restart, class, ...).
pub mod stream {
    pub const KMEANSPP: u64 = 1 << 32;
    pub const SHUFFLE: u64 = 2 << 32;
    pub const RESTART: u64 = 3 << 32;
    pub const DATA: u64 = 4 << 32;
    pub const CALIBRATION: u64 = 5 << 32;
    pub const CLUSTERING: u64 = 6 << 32;
    pub const BASELINE: u64 = 7 << 32;
    pub const CENTERS: u64 = 8 << 32;
}

/// A ChaCha stream keyed by `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a parent seed and a path of indices (splitmix64 mixing).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15))))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

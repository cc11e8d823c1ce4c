//! Seeded random streams.
//!
//! Every generator in the crate draws from a ChaCha8 stream addressed by
//! `(seed, stream)`. Independent quantities of one trial use distinct stream
//! ids so that adding a generator never perturbs the others.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type JadceRng = ChaCha8Rng;

/// Stream ids used by the scenario generators.
pub mod streams {
    pub const PILOTS: u64 = 1;
    pub const ACTIVITY: u64 = 2;
    pub const CHANNELS: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const PRIOR: u64 = 5;
    pub const TRAIN_BATCH: u64 = 6;
    pub const INIT: u64 = 7;
    pub const GRAD_SAMPLE: u64 = 8;
}

pub fn stream(seed: u64, stream: u64) -> JadceRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed; used to give each Monte-Carlo trial its own seed.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finaliser over (seed, index)
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Circular complex Gaussian sample with the given total variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

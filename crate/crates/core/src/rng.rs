//! Seeded random streams.
//!
//! All randomness comes from SplitMix64 (64-bit state). A run seed is split
//! into independent streams per purpose so that, for example, changing the
//! augmentation schedule never perturbs weight initialization.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
pub use rand_xoshiro::SplitMix64 as StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Sampling,
    Augment,
    Scene,
    Features,
}

impl Stream {
    fn salt(self) -> u64 {
        match self {
            Stream::Init => 0x1a2b_3c4d_5e6f_7081,
            Stream::Sampling => 0x9e37_79b9_7f4a_7c15,
            Stream::Augment => 0xc2b2_ae3d_27d4_eb4f,
            Stream::Scene => 0x1656_67b1_9e37_79f9,
            Stream::Features => 0x27d4_eb2f_1656_67c5,
        }
    }
}

pub fn stream(seed: u64, purpose: Stream) -> StreamRng {
    StreamRng::seed_from_u64(seed ^ purpose.salt())
}

/// Seed for the `index`-th child of `seed` (e.g. per-scene seeds).
pub fn derive(seed: u64, index: u64) -> u64 {
    let mut r = StreamRng::seed_from_u64(seed.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    r.gen()
}

/// Normal sample rejected outside `±2σ`.
pub fn truncated_normal<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * sigma;
        }
    }
}

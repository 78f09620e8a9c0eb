//! Seeded random streams.
//!
//! All randomness goes through `Xoshiro256PlusPlus` seeded with
//! `seed_from_u64` (SplitMix64 expansion). Uniform `f64` draws take the top 53
//! bits; normals come from `rand_distr::StandardNormal`.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
pub use rand_xoshiro::Xoshiro256PlusPlus as SimRng;

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Overwrites `buf` with independent standard normals.
pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, buf: &mut [f64]) {
    for v in buf {
        *v = rng.sample(StandardNormal);
    }
}

/// Stateless 64-bit mix used to derive child seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

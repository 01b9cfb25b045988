//! Deterministic seeding built on xoshiro256++.
//!
//! Every random draw in the crate flows through a named stream derived from a
//! user-visible base seed, so identical seeds reproduce identical artifacts
//! bit for bit.

use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// SplitMix64 output step; the standard seeding companion for xoshiro states.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed for a numbered stream of a base seed.
pub fn derive(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stream tags keep seed derivations from colliding across subsystems.
pub mod stream {
    pub const PARAM_INIT: u64 = 0x01;
    pub const ATTACK_INIT: u64 = 0x02;
    pub const SYNTH_PROTO: u64 = 0x03;
    pub const SYNTH_SAMPLE: u64 = 0x04;
    pub const VICTIM_TRAIN: u64 = 0x05;
    pub const SYNTH_SHARED: u64 = 0x06;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derive_is_deterministic_and_stream_sensitive() {
        assert_eq!(derive(42, 1), derive(42, 1));
        assert_ne!(derive(42, 1), derive(42, 2));
        assert_ne!(derive(42, 1), derive(43, 1));
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut a = rng_from(derive(7, stream::PARAM_INIT));
        let mut b = rng_from(derive(7, stream::PARAM_INIT));
        for _ in 0..16 {
            assert_eq!(a.gen::<f64>().to_bits(), b.gen::<f64>().to_bits());
        }
    }
}

//! Deterministic seed derivation. Every random stream in the crate is keyed by a
//! tuple of integers folded through a SplitMix64 finalizer, so results never
//! depend on scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into a single 64-bit seed. Order matters.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5150_5253_4545_4421_u64, |acc, &p| mix64(acc ^ mix64(p)))
}

/// Stable 64-bit key for a real-valued coordinate.
#[inline]
pub fn coord_bits(v: f64) -> u64 {
    // -0.0 and 0.0 are the same coordinate
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a over a byte string; used for config digests.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325_u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn derive_seed_is_order_sensitive() {
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_eq!(derive_seed(&[7, 8, 9]), derive_seed(&[7, 8, 9]));
    }

    #[test]
    fn no_collisions_over_a_million_streams() {
        let mut seen = HashSet::with_capacity(1_000_000);
        for cell in 0..1000u64 {
            for r in 0..1000u64 {
                assert!(seen.insert(derive_seed(&[42, cell, r])));
            }
        }
    }

    #[test]
    fn signed_zero_is_one_coordinate() {
        assert_eq!(coord_bits(0.0), coord_bits(-0.0));
    }
}

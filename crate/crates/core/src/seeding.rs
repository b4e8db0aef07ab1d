//! Deterministic seed derivation.
//!
//! Every random decision in the crate flows from a single root seed through
//! [`derive_seed`]. Items of a dataset (and independent episodes) get their
//! own stream keyed by index, so a builder produces bit-identical output
//! regardless of evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step. Fast, well-mixed, and stable across platforms.
fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    *state = z ^ (z >> 31);
}

/// Derives a child seed from a root seed, a domain tag, and an item index.
///
/// The tag keeps different consumers of the same root seed uncorrelated
/// (e.g. pose sampling vs. augmentation parameters).
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut state = root;
    splitmix64(&mut state);
    for &b in tag.as_bytes() {
        state ^= u64::from(b);
        splitmix64(&mut state);
    }
    state ^= index;
    splitmix64(&mut state);
    state
}

/// RNG for one item of a derived stream.
pub fn item_rng(root: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag, index))
}

/// RNG seeded directly, for operations whose contract takes a bare seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn derived_seeds_are_stable() {
        assert_eq!(
            derive_seed(7, "poses", 3),
            derive_seed(7, "poses", 3),
            "same inputs must give the same seed"
        );
    }

    #[test]
    fn streams_are_distinct_across_tags_and_indices() {
        let a = derive_seed(7, "poses", 0);
        let b = derive_seed(7, "noise", 0);
        let c = derive_seed(7, "poses", 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
    }

    #[test]
    fn item_rng_is_reproducible() {
        let mut r1 = item_rng(42, "t", 5);
        let mut r2 = item_rng(42, "t", 5);
        for _ in 0..16 {
            assert_eq!(r1.next_u64(), r2.next_u64());
        }
    }
}

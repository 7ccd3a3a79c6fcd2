//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a seed
//! derived from the run seed and a few integer tags, so a stream never
//! depends on how many values other streams consumed or on thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base`, order-sensitively.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags, kept in one place so no two call sites collide.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const POSITIVE_SUBSET: u64 = 2;
    pub const NEGATIVES: u64 = 3;
    pub const PAIR_SHUFFLE: u64 = 4;
    pub const EPOCH_ORDER: u64 = 5;
    pub const INIT: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const SYNTH_IDENTITY: u64 = 8;
    pub const SYNTH_IMAGE: u64 = 9;
    pub const SYNTH_META: u64 = 10;
    pub const VALIDATION: u64 = 11;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_order_sensitive_and_stable() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
    }
}

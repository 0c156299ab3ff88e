//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`], which produces the
//! same sequence on every platform. Child streams are split from a base seed
//! with a SplitMix64 finalizer so that `(base, tag)` pairs never collide in
//! practice and nearby tags give unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a stream tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(base) ^ tag.rotate_left(17) ^ 0xD1B5_4A32_D192_ED03)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand for `rng_from_seed(derive_seed(base, tag))`.
pub fn child_rng(base: u64, tag: u64) -> Rng {
    rng_from_seed(derive_seed(base, tag))
}

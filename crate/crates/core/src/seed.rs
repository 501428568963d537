//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from
//! `derive_seed(master, module, index)`. The derivation is FNV-1a over the
//! module name, folded with the master seed and instance index through the
//! SplitMix64 finalizer. It depends only on these three inputs, so any
//! reimplementation that follows the same rule reproduces the streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// `hash(master_seed, module_name, instance_index)`.
pub fn derive_seed(master: u64, module: &str, index: u64) -> u64 {
    let h = splitmix64(master ^ fnv1a(module.as_bytes()));
    splitmix64(h ^ splitmix64(index))
}

/// Generator for a plain integer seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for a derived stream.
pub fn stream(master: u64, module: &str, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, module, index))
}

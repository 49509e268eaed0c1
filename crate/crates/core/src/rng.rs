//! Seed splitting: every subsystem draws from its own stream derived from a
//! single root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream named `tag` under `root`.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    splitmix(root ^ splitmix(fnv1a(tag.as_bytes())))
}

/// Seed for the `index`-th member of a family of streams.
pub fn derive_indexed(root: u64, tag: &str, index: u64) -> u64 {
    splitmix(derive_seed(root, tag) ^ splitmix(index))
}

pub fn stream(root: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag))
}

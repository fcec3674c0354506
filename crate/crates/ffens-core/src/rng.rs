//! Seed derivation. One master seed fans out into independent named streams
//! (weight init, per-epoch negative sampling, data synthesis) so adding a new
//! consumer never shifts the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a, 64-bit. Stable across platforms and releases; used for stream tags
/// and for hashing canonical config text.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 finalizer: bijective scramble so nearby inputs land far apart.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Sub-seed for a named stream under a master seed.
pub fn substream_seed(master: u64, tag: &str) -> u64 {
    mix(master ^ mix(fnv1a_64(tag.as_bytes())))
}

/// RNG for a named stream. ChaCha keeps the sequence identical on every
/// platform, unlike the default small RNGs.
pub fn stream(master: u64, tag: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(substream_seed(master, tag))
}

//! Stable derivation of independent random streams from one run seed.
//! The mixer is a fixed FNV-1a/splitmix construction rather than the
//! standard library hasher, whose output may change between releases;
//! stream identity must survive toolchain upgrades for reproducibility.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with an ordered list of string tags into a new
/// 64-bit seed. Distinct tag lists give independent streams; a NUL
/// separator keeps `["ab","c"]` distinct from `["a","bc"]`.
pub fn mix(base: u64, tags: &[&str]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &base.to_le_bytes());
    for tag in tags {
        h = fnv1a(h, tag.as_bytes());
        h = fnv1a(h, &[0]);
    }
    splitmix(h)
}

/// A ChaCha stream keyed by `mix(base, tags)`.
pub fn stream(base: u64, tags: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(base, tags))
}

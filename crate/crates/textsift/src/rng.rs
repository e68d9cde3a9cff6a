//! Deterministic, content-addressed random streams.
//!
//! Every perturbation draws from a ChaCha8 stream whose seed is derived by
//! hashing the identifiers of the work item (setting seed, record id, field
//! name). Streams are therefore independent of processing order and of the
//! parallelism degree: the same (corpus, grid, base seed) always produces the
//! same output, no matter how the work is scheduled.
//!
//! Derivation v1: FNV-1a 64 over the length-prefixed key parts, finalized
//! with a splitmix64 round. Bump the version tag if this ever changes.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_DERIVATION_VERSION: &str = "fnv1a64-splitmix64/chacha8-v1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hash a seed together with string key parts into a 64-bit stream seed.
/// Parts are length-prefixed so `("ab", "c")` and `("a", "bc")` differ.
pub fn stream_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    for part in parts {
        h = fnv1a(h, &(part.len() as u64).to_le_bytes());
        h = fnv1a(h, part.as_bytes());
    }
    splitmix64(h)
}

/// The generator used for all perturbation draws.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Deterministic derivation of independent RNG streams.
//!
//! Every random decision in the pipeline draws from a ChaCha stream keyed by
//! a master seed mixed with a stream tag and the relevant indices. The mixing
//! is pure 64-bit integer arithmetic, so streams are identical across
//! platforms and across runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keeping unrelated consumers of the same master seed apart.
pub mod stream {
    pub const FOLD: u64 = 0x01;
    pub const EPOCH: u64 = 0x02;
    pub const INIT: u64 = 0x03;
    pub const ORDER: u64 = 0x04;
    pub const SPLIT: u64 = 0x05;
    pub const RUN: u64 = 0x06;
    pub const BOOT_CURVE: u64 = 0x07;
    pub const BOOT_FINAL: u64 = 0x08;
    pub const DIRECTION: u64 = 0x09;
    pub const SLIDE: u64 = 0x0a;
    pub const BAG_CAP: u64 = 0x0b;
    pub const JITTER: u64 = 0x0c;
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold `parts` into `seed`, one splitmix round per part.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ p))
}

/// FNV-1a over raw bytes; used to key streams by string identifiers.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn mix_str(seed: u64, s: &str) -> u64 {
    mix(seed, &[fnv1a(s.as_bytes())])
}

/// ChaCha stream for a derived seed. ChaCha output is platform-independent.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn mix_is_deterministic_and_order_sensitive() {
        assert_eq!(mix(7, &[1, 2]), mix(7, &[1, 2]));
        assert_ne!(mix(7, &[1, 2]), mix(7, &[2, 1]));
        assert_ne!(mix(7, &[1]), mix(8, &[1]));
    }

    #[test]
    fn string_streams_differ() {
        assert_ne!(mix_str(0, "liver"), mix_str(0, "lung"));
        assert_eq!(mix_str(3, "liver"), mix_str(3, "liver"));
    }

    #[test]
    fn rng_streams_reproduce() {
        let mut r1 = rng(42);
        let mut r2 = rng(42);
        let a: Vec<u64> = (0..8).map(|_| r1.random()).collect();
        let b: Vec<u64> = (0..8).map(|_| r2.random()).collect();
        assert_eq!(a, b);
    }
}

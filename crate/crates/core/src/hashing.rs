//! Stable seeded hashing used for every per-item random decision.
//!
//! Lazy parameter initialisation, skip down-sampling and per-event simulator
//! draws all derive their randomness from a hash of the item identity rather
//! than from a sequential generator, so results do not depend on arrival
//! order or on how a stream is sharded. `std`'s `DefaultHasher` is not
//! stable across releases, hence the hand-rolled mixers here.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub fn combine(a: u64, b: u64) -> u64 {
    mix64(a ^ mix64(b).rotate_left(17))
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Maps a hash to a uniform draw in `[0, 1)` using the top 53 bits.
#[inline]
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic `[0, 1)` draw for `(seed, stream, id)`.
#[inline]
pub fn uniform(seed: u64, stream: u64, id: u64) -> f64 {
    unit_interval(combine(combine(seed, stream), id))
}

pub fn rng_for(seed: u64, stream: u64, id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(combine(combine(seed, stream), id))
}

/// Stream tags keep independent decisions from sharing hash inputs.
pub mod stream {
    pub const LAZY_INIT: u64 = 0x1a2b_0001;
    pub const DOWNSAMPLE: u64 = 0x1a2b_0002;
    pub const EVENT: u64 = 0x1a2b_0003;
    pub const WORLD: u64 = 0x1a2b_0004;
    pub const AUCTION: u64 = 0x1a2b_0005;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_interval_bounds() {
        assert_eq!(unit_interval(0), 0.0);
        assert!(unit_interval(u64::MAX) < 1.0);
    }

    #[test]
    fn uniform_is_roughly_uniform() {
        let n = 200_000u64;
        let mean = (0..n).map(|i| uniform(7, 1, i)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        let below = (0..n).filter(|&i| uniform(7, 1, i) < 0.1).count() as f64 / n as f64;
        assert!((below - 0.1).abs() < 0.003, "share {below}");
    }

    #[test]
    fn streams_are_decorrelated() {
        let same = (0..10_000u64)
            .filter(|&i| (uniform(3, 1, i) < 0.5) == (uniform(3, 2, i) < 0.5))
            .count();
        assert!((4_700..5_300).contains(&same), "{same}");
    }
}

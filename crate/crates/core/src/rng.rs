//! Seeded random streams.
//!
//! Every run is driven by one 64-bit seed. Independent streams (trials,
//! boosting repetitions, fixture construction) are carved out of it by
//! ChaCha's 64-bit stream selector, so stream `k` of seed `s` is the same
//! sequence regardless of how many other streams were used or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TrialRng = ChaCha8Rng;

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> TrialRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for a labelled purpose within a seed, e.g. fixture data versus trial noise.
pub fn labelled(seed: u64, label: &str, index: u64) -> TrialRng {
    stream(seed ^ fnv1a(label.as_bytes()), index)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer. Used to turn a sample key into reproducible noise.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform in [-1, 1) derived from `(key, slot)`.
pub(crate) fn hashed_symmetric_unit(key: u64, slot: u64) -> f64 {
    let h = splitmix64(key ^ splitmix64(slot.wrapping_add(0x5851_f42d_4c95_7f2d)));
    // 53 high bits -> [0, 1)
    let u = (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    2.0 * u - 1.0
}

//! Counter-based 64-bit mixing used wherever a value must be reproducible
//! from `(seed, counter)` alone (model weights, random eviction keys).
//!
//! The update is SplitMix64: `z = seed + (counter + 1) * 0x9E3779B97F4A7C15`,
//! then `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9`,
//! `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`, `z ^ (z >> 31)`, all wrapping.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Value number `counter` of the stream keyed by `seed`.
pub fn counter_u64(seed: u64, counter: u64) -> u64 {
    mix64(seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Uniform in `[0, 1)` with 53 bits of precision.
pub fn counter_unit(seed: u64, counter: u64) -> f64 {
    (counter_u64(seed, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives an independent stream seed from a parent seed and a salt.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix64(seed ^ mix64(salt.wrapping_add(GOLDEN_GAMMA)))
}

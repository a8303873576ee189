//! Deterministic random streams.
//!
//! Disorder fields use a stateless counter hash: the weight at site `(i, x)`
//! is a pure function of `(seed, i, x)`, built from three rounds of the
//! SplitMix64 finalizer. Fields sampled on nested boxes with the same seed
//! therefore agree on their common sites.
//!
//! Everything else (Poisson samples, bootstrap resampling, path sampling)
//! draws from ChaCha8 streams keyed by a derived 64-bit seed. Both generators
//! produce identical output on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One SplitMix64 step: advance by the golden gamma, then finalize.
#[inline]
pub fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a list of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(base), |acc, &t| splitmix64(acc ^ t))
}

/// Map 64 random bits to the open interval (0, 1): the midpoints of a
/// 2^{-52} grid, so both endpoints are excluded exactly.
#[inline]
pub fn bits_to_open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Uniform variate attached to the lattice site `(i, x)`.
#[inline]
pub fn site_uniform(seed: u64, i: u64, x: i64) -> f64 {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ i) ^ (x as u64));
    bits_to_open_unit(h)
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

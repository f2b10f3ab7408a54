//! Seeded, version-stable randomness.
//!
//! Every random draw in this crate flows through a ChaCha12 stream keyed by
//! a 64-bit seed. The pieces that turn seeds into draws are written out here
//! rather than delegated to a randomness framework, because reproducibility
//! from the seed alone is part of the crate's contract:
//!
//! * seed expansion: the 32-byte ChaCha key is the first four outputs of the
//!   SplitMix64 sequence started at the seed;
//! * child seeds: `mix64(parent ^ mix64(lane))`, used to give strata,
//!   designs, and replicates independent streams;
//! * bounded integers: rejection sampling on the raw 64-bit output (no
//!   modulo bias);
//! * standard normals: Box–Muller on two fresh 53-bit uniforms, cosine
//!   branch only, so every call consumes exactly two 64-bit words.
//!
//! None of these steps depend on behaviour that could change under a
//! dependency upgrade; `rand_chacha` contributes only the ChaCha12 core.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function (increment fused in): well-mixed 64 bits.
pub(crate) fn mix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for an indexed sub-stream (stratum, design, replicate).
pub(crate) fn child_seed(parent: u64, lane: u64) -> u64 {
    mix64(parent ^ mix64(lane))
}

/// ChaCha12 stream keyed by the first four SplitMix64 outputs after `seed`.
pub(crate) fn stream(seed: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        let word = mix64(seed.wrapping_add((i as u64).wrapping_mul(GOLDEN_GAMMA)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Uniform integer in `[0, bound)` by rejection below the largest multiple
/// of `bound` that fits in 64 bits. Unbiased for every bound.
pub(crate) fn uniform_index(rng: &mut ChaCha12Rng, bound: usize) -> usize {
    debug_assert!(bound > 0, "uniform_index needs a positive bound");
    let bound = bound as u64;
    let limit = (u64::MAX / bound) * bound;
    loop {
        let x = rng.next_u64();
        if x < limit {
            return (x % bound) as usize;
        }
    }
}

/// Uniform draw in `[0, 1)` with 53 random bits.
pub(crate) fn uniform_f64(rng: &mut ChaCha12Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box–Muller; consumes exactly two 64-bit words.
pub(crate) fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1 = uniform_f64(rng);
    let u2 = uniform_f64(rng);
    // 1 - u1 lies in (0, 1], so the logarithm is finite.
    let radius = (-2.0 * (1.0 - u1).ln()).sqrt();
    radius * (std::f64::consts::TAU * u2).cos()
}

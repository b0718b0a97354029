//! Deterministic, purpose-keyed random streams.
//!
//! Every random draw in this crate comes from a ChaCha8 generator keyed by
//! `(seed, purpose, tags...)` through a SplitMix64 mixer. Streams with
//! different purposes or tags are independent, and a draw never depends on
//! how many draws other streams made first. Two consequences matter for the
//! simulator:
//!
//! - **Common random numbers.** Reward noise is keyed by `(seed, t, u, i)`,
//!   so every algorithm run on the same seed sees the same noise for the
//!   same pair at the same round, regardless of what it allocated earlier.
//! - **Bitwise reproducibility.** Rerunning a config reproduces every draw,
//!   hence byte-identical output files.
//!
//! Normal deviates use a Box-Muller transform over two 53-bit uniforms so
//! the mapping from generator output to sample is fixed by this module and
//! does not depend on a dependency's sampler internals.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Each purpose gets an independent stream per
/// run seed (and per tag tuple).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    /// Ground-truth instance generation (factor rows).
    Instance,
    /// Per-round demand/capacity draws.
    Constraints,
    /// Reward noise; tags are (round, user, item).
    RewardNoise,
    /// Random initialization of alternating least squares; tag is the round.
    AlsInit,
    /// Uniform truncation of over-subscribed items in the index baseline.
    IrTruncation,
    /// Ratings-matrix completion initialization.
    Completion,
}

impl Purpose {
    fn id(self) -> u64 {
        match self {
            Purpose::Instance => 1,
            Purpose::Constraints => 2,
            Purpose::RewardNoise => 3,
            Purpose::AlsInit => 4,
            Purpose::IrTruncation => 5,
            Purpose::Completion => 6,
        }
    }
}

/// One SplitMix64 output step; the standard finalizer constants.
fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds the ChaCha8 stream for `(seed, purpose, tags...)`.
pub fn stream(seed: u64, purpose: Purpose, tags: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x5eed_ba5e_c0de_0001_u64;
    let _ = splitmix(&mut state);
    state ^= purpose.id().wrapping_mul(0xd6e8_feb8_6659_fd93);
    let _ = splitmix(&mut state);
    for &tag in tags {
        state ^= tag.wrapping_mul(0xa076_1d64_78bd_642f);
        let _ = splitmix(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw in (0, 1]; 53 significant bits.
fn unit_open_closed(rng: &mut ChaCha8Rng) -> f64 {
    (((rng.next_u64() >> 11) + 1) as f64) * (1.0 / 9_007_199_254_740_992.0)
}

/// Standard normal deviate via Box-Muller (cosine branch).
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = unit_open_closed(rng);
    let u2 = unit_open_closed(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The reward-noise deviate for pair `(u, i)` at round `t` under `seed`.
///
/// Keyed by the pair and round only, so it is independent of allocation
/// order and identical across algorithms sharing the seed.
pub fn pair_noise(seed: u64, t: usize, u: usize, i: usize) -> f64 {
    let mut rng = stream(seed, Purpose::RewardNoise, &[t as u64, u as u64, i as u64]);
    standard_normal(&mut rng)
}

//! Deterministic, named random-number streams.
//!
//! All randomness in a run flows from one master seed. Consumers never share
//! an RNG: each unit of work (a prompt slot in an iteration, an evaluation
//! sample for a task, ...) derives its own ChaCha stream from the master seed,
//! a stream label, and up to two counters. Work can therefore be reordered or
//! parallelized without changing any sampled value.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// The RNG used throughout the crate.
pub type Rng = ChaCha8Rng;

/// Label distinguishing independent sources of randomness within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Per-iteration prompt selection from the task distribution.
    Prompts = 1,
    /// Rollout generation; counters are (iteration, prompt slot).
    Rollout = 2,
    /// Evaluation sampling; counters are (task-id hash, sample index).
    Eval = 3,
    /// Task-suite generation.
    Generator = 4,
    /// Baseline dataset sampling; counters are (task-id hash, 0).
    Baseline = 5,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(h: u64, v: u64) -> u64 {
    let mut s = h ^ v.wrapping_mul(GOLDEN);
    splitmix64(&mut s)
}

/// Derive the RNG for `(seed, stream, a, b)`.
pub fn derive_rng(seed: u64, stream: Stream, a: u64, b: u64) -> Rng {
    let mut h = seed;
    h = splitmix64(&mut h);
    h = mix(h, stream as u64);
    h = mix(h, a);
    h = mix(h, b);
    let mut key = [0u8; 32];
    let mut state = h;
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    Rng::from_seed(key)
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
#[inline]
pub fn uniform(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// FNV-1a hash of a string, used to key per-task streams by identifier so
/// evaluation results do not depend on task order.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

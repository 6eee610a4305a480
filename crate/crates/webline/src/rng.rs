//! Counter-based random-number streams.
//!
//! Every consumer gets its own ChaCha stream addressed by what the draw is
//! for, never by when it happens to be scheduled: rollout `k` at control
//! step `t` always reads stream `(t, k)`, and the plant disturbance at step
//! `t` reads a stream in a disjoint domain. Worker count and scheduling
//! order therefore cannot change a single drawn value.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Top bit tags the plant-disturbance domain; rollout streams keep it zero.
const PLANT_DOMAIN: u64 = 1 << 63;

/// Stream for Monte-Carlo rollout `k` of control step `step`.
///
/// `step` must stay below 2³¹ and `k` below 2³² for the packing to be
/// collision-free; both bounds are far beyond any realistic run.
pub fn rollout_stream(seed: u64, step: usize, k: usize) -> ChaCha8Rng {
    debug_assert!(step < (1 << 31));
    debug_assert!(k < (1 << 32));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 32) | k as u64);
    rng
}

/// Stream for the plant disturbance applied at control step `step`.
pub fn plant_stream(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PLANT_DOMAIN | step as u64);
    rng
}

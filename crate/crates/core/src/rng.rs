//! Seeded random streams.
//!
//! Every Monte Carlo trial owns a `SimRng` seeded from
//! `derive_seed(base, sweep_index, trial_index)`. The derivation is three
//! rounds of the SplitMix64 finalizer:
//!
//! ```text
//! s = mix(base ^ 0x9E3779B97F4A7C15)
//! s = mix(s ^ sweep_index)
//! s = mix(s ^ trial_index.rotate_left(32))
//! ```
//!
//! where `mix(z)` is `z += 0x9E3779B97F4A7C15; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//! z = (z ^ z>>27) * 0x94D049BB133111EB; z ^ z>>31` (wrapping arithmetic).
//! The stream itself is ChaCha8, which is portable across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, sweep_index: u64, trial_index: u64) -> u64 {
    let s = mix(base ^ GOLDEN);
    let s = mix(s ^ sweep_index);
    mix(s ^ trial_index.rotate_left(32))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn trial_rng(base: u64, sweep_index: u64, trial_index: u64) -> SimRng {
    rng_from_seed(derive_seed(base, sweep_index, trial_index))
}

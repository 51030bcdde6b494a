//! Seeded randomness with a fixed, documented contract.
//!
//! All shuffles use ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`) and the
//! textbook Fisher–Yates walk: for `i` from `n-1` down to `1`, draw
//! `j = next_u64() % (i + 1)` and swap `i` and `j`. Any implementation with the
//! same generator reproduces the same permutation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mix several integers into one seed (SplitMix64 finalizer per step).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    for &p in parts {
        state = mix(state ^ mix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    state
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fisher_yates<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

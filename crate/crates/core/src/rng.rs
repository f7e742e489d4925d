use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` points drawn uniformly from the box `[lo, hi]^D`.
pub(crate) fn uniform_points<const D: usize>(
    n: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> Vec<[f64; D]> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| core::array::from_fn(|_| rng.gen_range(lo..=hi)))
        .collect()
}

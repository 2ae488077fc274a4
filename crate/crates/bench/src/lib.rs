//! Shared fixtures for the benchmarks.

use bimatch_core::{FeatureMap, ProbMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform random features in `[-1, 1)`.
pub fn features(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..c * h * w)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    FeatureMap::new(c, h, w, data).expect("finite features")
}

/// A centered square of foreground covering roughly a quarter of the grid.
pub fn centered_mask(h: usize, w: usize) -> ProbMask {
    let on: Vec<bool> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            (h / 4..3 * h / 4).contains(&y) && (w / 4..3 * w / 4).contains(&x)
        })
        .collect();
    ProbMask::from_binary(h, w, &on).expect("mask dims")
}

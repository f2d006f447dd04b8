//! Shared fixtures for the benchmarks.

use glcm_cnn::{GridImage, RoiMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform intensities in `[0, 255)` with a Bernoulli mask of the given
/// density.
pub fn random_volume(dims: [usize; 3], spacing: [f64; 3], density: f64, seed: u64) -> (GridImage, RoiMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let values = (0..n).map(|_| rng.random_range(0.0..255.0)).collect();
    let bits = (0..n).map(|_| rng.random_bool(density)).collect();
    (
        GridImage::new(dims, 1, spacing, values).expect("valid fixture"),
        RoiMask::new(dims, bits).expect("valid fixture"),
    )
}

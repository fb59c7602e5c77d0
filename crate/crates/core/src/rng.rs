//! Seeded randomness shared by the samplers and trainers.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named sub-task.
pub fn substream(seed: u64, tag: u64) -> SeededRng {
    // splitmix64 finalizer keeps nearby seeds/tags from producing related streams
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seeded(z ^ (z >> 31))
}

/// Latin hypercube sample of `count` points in the box, row-major `count × dim`.
pub fn latin_hypercube<R: Rng>(rng: &mut R, lower: &[f64], upper: &[f64], count: usize) -> Vec<Vec<f64>> {
    let dim = lower.len();
    let mut points = alloc::vec![alloc::vec![0.0; dim]; count];
    let mut strata: Vec<usize> = (0..count).collect();
    for d in 0..dim {
        strata.shuffle(rng);
        let width = upper[d] - lower[d];
        for (i, point) in points.iter_mut().enumerate() {
            let u: f64 = rng.random();
            let frac = (strata[i] as f64 + u) / count as f64;
            point[d] = (lower[d] + frac * width).clamp(lower[d], upper[d]);
        }
    }
    points
}

pub fn uniform_in_box<R: Rng>(rng: &mut R, lower: &[f64], upper: &[f64]) -> Vec<f64> {
    lower
        .iter()
        .zip(upper)
        .map(|(&lo, &hi)| lo + rng.random::<f64>() * (hi - lo))
        .collect()
}

pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Uniform draw in `[-1, 1]`.
pub fn symmetric_unit<R: Rng>(rng: &mut R) -> f64 {
    2.0 * rng.random::<f64>() - 1.0
}

use alloc::vec::Vec;

use rand::Rng;

use crate::rng;

/// Outcome of parent selection.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Every error is within tolerance.
    Converged,
    Pairs(Vec<(usize, usize)>),
}

/// Draws `count` parent pairs from the individuals whose error exceeds
/// `alpha`, each with probability proportional to its error. Pairs use two
/// distinct individuals whenever at least two exceed the tolerance.
pub fn select_parents<R: Rng>(errors: &[f64], alpha: f64, count: usize, rng: &mut R) -> Selection {
    let pool: Vec<usize> = (0..errors.len()).filter(|&i| errors[i] > alpha).collect();
    if pool.is_empty() {
        return Selection::Converged;
    }
    let weights: Vec<f64> = pool.iter().map(|&i| errors[i]).collect();
    let total: f64 = weights.iter().sum();
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let a = draw(&weights, total, None, rng);
        let b = if pool.len() >= 2 {
            draw(&weights, total - weights[a], Some(a), rng)
        } else {
            a
        };
        pairs.push((pool[a], pool[b]));
    }
    Selection::Pairs(pairs)
}

fn draw<R: Rng>(weights: &[f64], total: f64, skip: Option<usize>, rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if Some(i) == skip || w <= 0.0 {
            continue;
        }
        last = Some(i);
        if u < w {
            return i;
        }
        u -= w;
    }
    // rounding can leave a sliver of mass past the final bucket
    last.unwrap_or(0)
}

/// `β·p1 + (1 − β)·p2 + ε`, `ε ~ N(0, σ²·width²)` per coordinate, clamped to
/// the box. `β` is drawn from U[0, 1] unless given.
pub fn generate_offspring<R: Rng>(
    p1: &[f64],
    p2: &[f64],
    lower: &[f64],
    upper: &[f64],
    sigma: f64,
    beta: Option<f64>,
    rng: &mut R,
) -> Vec<f64> {
    let beta = beta.unwrap_or_else(|| rng.random::<f64>());
    (0..p1.len())
        .map(|i| {
            let mut v = beta * p1[i] + (1.0 - beta) * p2[i];
            if sigma > 0.0 {
                v += sigma * (upper[i] - lower[i]) * rng::standard_normal(rng);
            }
            v.clamp(lower[i], upper[i])
        })
        .collect()
}

/// Uniform tensor grid with `ceil(count^(1/m))` points per axis, endpoints included.
pub fn monitor_grid(lower: &[f64], upper: &[f64], count: usize) -> Vec<Vec<f64>> {
    let m = lower.len();
    if count == 0 || m == 0 {
        return Vec::new();
    }
    let mut k = libm::ceil(libm::pow(count as f64, 1.0 / m as f64)) as usize;
    // pow can overshoot by one ulp, e.g. 100^(1/2)
    while k > 1 && (k - 1).checked_pow(m as u32).is_some_and(|v| v >= count) {
        k -= 1;
    }
    let k = k.max(2);
    let total = k.pow(m as u32);
    (0..total)
        .map(|mut idx| {
            (0..m)
                .map(|d| {
                    let j = idx % k;
                    idx /= k;
                    let s = j as f64 / (k - 1) as f64;
                    ((1.0 - s) * lower[d] + s * upper[d]).clamp(lower[d], upper[d])
                })
                .collect()
        })
        .collect()
}

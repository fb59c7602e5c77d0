//! Gauss–Legendre quadrature on arbitrary intervals.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{Error, Result};

/// An `n`-point Gauss–Legendre rule on `[-1, 1]`, exact for polynomials of
/// degree `2n - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("quadrature needs at least one node".into()));
        }
        let mut nodes = alloc::vec![0.0; n];
        let mut weights = alloc::vec![0.0; n];
        // roots are symmetric; solve for the upper half with Newton from the
        // Tricomi initial guess
        for i in 0..n.div_ceil(2) {
            let mut x = libm::cos(PI * (i as f64 + 0.75) / (n as f64 + 0.5));
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn reference_nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn reference_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let nodes = self.nodes.iter().map(|x| mid + half * x).collect();
        let weights = self.weights.iter().map(|w| half * w).collect();
        (nodes, weights)
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_nodes_sorted() {
        for n in 1..40 {
            let r = GaussLegendre::new(n).unwrap();
            let s: f64 = r.reference_weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
            assert!(r.reference_nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn exact_for_degree_2n_minus_1() {
        let r = GaussLegendre::new(5).unwrap();
        // ∫_0^2 x^9 dx = 2^10 / 10
        let v = r.integrate(0.0, 2.0, |x| libm::pow(x, 9.0));
        assert!((v - 102.4).abs() < 1e-10);
    }

    #[test]
    fn constant_integrand_gives_interval_length() {
        let r = GaussLegendre::new(32).unwrap();
        assert!((r.integrate(0.0, 0.9, |_| 1.0) - 0.9).abs() < 1e-14);
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(GaussLegendre::new(0).is_err());
    }
}

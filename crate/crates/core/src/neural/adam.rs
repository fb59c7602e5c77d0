use alloc::vec::Vec;

use crate::{Error, Result};

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: alloc::vec![0.0; len],
            v: alloc::vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, weights: &mut [f64], grads: &[f64]) -> Result<()> {
        Error::check_len("adam weights", self.m.len(), weights.len())?;
        Error::check_len("adam gradients", self.m.len(), grads.len())?;
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for i in 0..weights.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            weights[i] -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_weights() {
        let mut adam = AdamState::new(3, 0.1);
        let mut w = [1.0, -2.0, 3.0];
        adam.step(&mut w, &[0.0; 3]).unwrap();
        assert_eq!(w, [1.0, -2.0, 3.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = AdamState::new(2, 0.01);
        let mut w = [0.0, 0.0];
        adam.step(&mut w, &[5.0, -0.3]).unwrap();
        assert!((w[0] + 0.01).abs() < 1e-9);
        assert!((w[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut adam = AdamState::new(1, 0.1);
        let mut w = [0.0];
        let mut dist = alloc::vec::Vec::new();
        for _ in 0..100 {
            let g = 2.0 * (w[0] - 3.0);
            adam.step(&mut w, &[g]).unwrap();
            dist.push((w[0] - 3.0).abs());
        }
        // Adam approaches from below at roughly lr per step, then settles
        assert!(dist[..25].windows(2).all(|d| d[1] < d[0]));
        assert!(dist[99] < 0.5);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut adam = AdamState::new(2, 0.1);
        assert!(adam.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}

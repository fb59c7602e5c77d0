//! Forward-mode dual numbers `a + b·ε` with `ε² = 0`.

use core::ops::{Add, Mul, Neg, Sub};

/// Arithmetic needed to push a value through the affine-tanh chain.
pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn from_f64(v: f64) -> Self;
    fn scale(self, k: f64) -> Self;
    fn tanh(self) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    pub const fn constant(re: f64) -> Self {
        Self { re, eps: 0.0 }
    }

    pub const fn variable(re: f64) -> Self {
        Self { re, eps: 1.0 }
    }
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    fn from_f64(v: f64) -> Self {
        Self::constant(v)
    }
    fn scale(self, k: f64) -> Self {
        Self::new(self.re * k, self.eps * k)
    }
    fn tanh(self) -> Self {
        let t = libm::tanh(self.re);
        Self::new(t, (1.0 - t * t) * self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_chain_rules() {
        let x = Dual::variable(0.3);
        let y = (x * x + x.scale(2.0)).tanh();
        let v = 0.09 + 0.6;
        let expected = (1.0 - libm::tanh(v) * libm::tanh(v)) * (2.0 * 0.3 + 2.0);
        assert!((y.re - libm::tanh(v)).abs() < 1e-15);
        assert!((y.eps - expected).abs() < 1e-15);
        assert_eq!((-x - x).eps, -2.0);
    }
}

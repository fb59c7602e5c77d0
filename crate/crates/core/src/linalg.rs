//! Thin helpers over `nalgebra` for the small dense systems used throughout.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Solves `a · x = b` for row-major square `a`. Returns `None` when singular.
pub fn solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let m = DMatrix::from_row_slice(n, n, a);
    let lu = m.lu();
    let x = lu.solve(&DVector::from_column_slice(b))?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x.iter().copied().collect())
    } else {
        None
    }
}

/// Solves a symmetric positive-definite system by Cholesky, `None` if `a` is not PD.
pub fn solve_spd(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let m = DMatrix::from_row_slice(n, n, a);
    let chol = m.cholesky()?;
    let x = chol.solve(&DVector::from_column_slice(b));
    Some(x.iter().copied().collect())
}

/// Smallest singular value of a row-major `rows × cols` matrix.
pub fn min_singular_value(a: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 0 || cols == 0 {
        return f64::INFINITY;
    }
    let m = DMatrix::from_row_slice(rows, cols, a);
    m.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Infinity norm (max absolute row sum) of a row-major matrix.
pub fn norm_inf(a: &[f64], rows: usize, cols: usize) -> f64 {
    (0..rows)
        .map(|i| a[i * cols..(i + 1) * cols].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Eigen-decomposition of a real square matrix with distinct eigenvalues.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<Complex64>,
    /// Eigenvectors as columns, row-major `n × n`.
    pub vectors: Vec<Complex64>,
    /// Inverse of the eigenvector matrix, row-major.
    pub inverse: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EigenFailure {
    Repeated { gap: f64 },
    SingularVectors,
}

/// Computes eigenvalues with nalgebra's real Schur form and eigenvectors by
/// inverse iteration. Eigenvalues closer than `repeat_tol · max(1, |λ|max)`
/// are reported as repeated.
pub fn eigen_distinct(a: &[f64], n: usize, repeat_tol: f64) -> Result<Eigen, EigenFailure> {
    let m = DMatrix::from_row_slice(n, n, a);
    let values: Vec<Complex64> = m
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect();
    let scale = values.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut gap = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            gap = gap.min((values[i] - values[j]).norm());
        }
    }
    if gap < repeat_tol * scale {
        return Err(EigenFailure::Repeated { gap });
    }

    let mc: DMatrix<Complex64> = m.map(|v| Complex64::new(v, 0.0));
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    for (k, &lambda) in values.iter().enumerate() {
        // shift slightly off the eigenvalue so the shifted matrix stays invertible
        let shift = lambda + Complex64::new(1e-10 * scale, 1e-10 * scale);
        let shifted = &mc - DMatrix::<Complex64>::identity(n, n) * shift;
        let lu = shifted.lu();
        let mut v = DVector::<Complex64>::from_element(n, Complex64::new(1.0, 0.0));
        for (i, c) in v.iter_mut().enumerate() {
            *c += Complex64::new(0.1 * i as f64, 0.0);
        }
        for _ in 0..4 {
            let w = lu.solve(&v).ok_or(EigenFailure::SingularVectors)?;
            let norm = libm::sqrt(w.iter().map(|c| c.norm_sqr()).sum::<f64>());
            if !norm.is_finite() || norm == 0.0 {
                return Err(EigenFailure::SingularVectors);
            }
            v = w / Complex64::new(norm, 0.0);
        }
        vectors.set_column(k, &v);
    }
    let inverse = vectors.clone().try_inverse().ok_or(EigenFailure::SingularVectors)?;
    let cond = complex_norm_inf(&vectors) * complex_norm_inf(&inverse);
    if !cond.is_finite() || cond > 1e12 {
        return Err(EigenFailure::SingularVectors);
    }
    Ok(Eigen {
        values,
        vectors: row_major(&vectors),
        inverse: row_major(&inverse),
    })
}

fn complex_norm_inf(m: &DMatrix<Complex64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|c| c.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn row_major(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_reconstructs_rotation_generator() {
        let a = [0.0, 1.0, -1.0, 0.0];
        let e = eigen_distinct(&a, 2, 1e-8).unwrap();
        for k in 0..2 {
            // A v = λ v
            for i in 0..2 {
                let av: Complex64 = (0..2).map(|j| e.vectors[j * 2 + k] * a[i * 2 + j]).sum();
                let lv = e.values[k] * e.vectors[i * 2 + k];
                assert!((av - lv).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn repeated_eigenvalues_rejected() {
        let a = [-10.0, 0.0, 10.0, -10.0];
        assert!(matches!(
            eigen_distinct(&a, 2, 1e-8),
            Err(EigenFailure::Repeated { .. })
        ));
    }

    #[test]
    fn solve_small_system() {
        let x = solve(&[2.0, 1.0, 1.0, 3.0], &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        assert!(solve(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0]).is_none());
        assert!(solve_spd(&[1.0, 2.0, 2.0, 1.0], &[1.0, 1.0]).is_none());
    }
}

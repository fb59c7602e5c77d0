//! Global error bound for the surrogate from a local linearization of the
//! dynamics around a trajectory.
//!
//! Writing the (reduced) Jacobian along the trajectory as `A(t) = A0 + R(t)`
//! with `A0 = P Λ P⁻¹`, a residual bounded by `δ` produces a state error of at
//! most `‖P‖∞ · δ / c · (e^{cℏ} − 1)` over a horizon `ℏ`, where
//! `c = ā₁ + n·r_max`. The eigenvector columns are scaled so that every row of
//! `P⁻¹` has unit absolute sum, so `‖P⁻¹‖∞ = 1` and `‖P‖∞` carries the full
//! condition factor.

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::integrate::Trajectory;
use crate::linalg::{self, EigenFailure};
use crate::problems::ParametricDaeProblem;
use crate::{Error, Result};

/// Relative gap below which two eigenvalues count as repeated.
pub const REPEAT_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LinearizationData {
    /// Row-major `n × n`.
    pub a0: Vec<f64>,
    pub eigenvalues: Vec<Complex64>,
    /// Eigenvectors as columns, row-major, scaled so `‖P⁻¹‖∞ = 1`.
    pub p: Vec<Complex64>,
    pub p_norm: f64,
    pub a1_bar: f64,
    pub r_max: f64,
    pub n: usize,
}

impl LinearizationData {
    /// Eigen-data of a constant matrix; `r_max` starts at zero.
    pub fn from_matrix(a0: Vec<f64>, n: usize) -> Result<Self> {
        Error::check_len("linearization matrix", n * n, a0.len())?;
        let eig = linalg::eigen_distinct(&a0, n, REPEAT_TOL).map_err(|e| match e {
            EigenFailure::Repeated { gap } => Error::PreconditionViolation(format!(
                "linearized system has repeated eigenvalues (gap {gap:.3e}); it is not diagonalizable with distinct eigenvalues"
            )),
            EigenFailure::SingularVectors => {
                Error::PreconditionViolation("eigenvector matrix is numerically singular".into())
            }
        })?;
        let mut p = eig.vectors;
        for k in 0..n {
            let row_sum: f64 = eig.inverse[k * n..(k + 1) * n].iter().map(|c| c.norm()).sum();
            for i in 0..n {
                p[i * n + k] *= row_sum;
            }
        }
        let p_norm = (0..n)
            .map(|i| p[i * n..(i + 1) * n].iter().map(|c| c.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let a1_bar = eig.values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            a0,
            eigenvalues: eig.values,
            p,
            p_norm,
            a1_bar,
            r_max: 0.0,
            n,
        })
    }
}

/// Jacobian of the differential right-hand side after eliminating the
/// algebraic states, `f_y − f_z g_z⁻¹ g_y`, row-major `n_d × n_d`. For an
/// explicit ODE this is simply `∂f/∂x`.
pub fn reduced_jacobian(problem: &ParametricDaeProblem, t: f64, p: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let n = problem.state_dim();
    let diff = problem.differential_indices();
    let alg = problem.algebraic_indices();
    let nd = diff.len();
    let na = alg.len();
    let fx = problem.dynamics_jacobian(t, p, x);
    let mut a = alloc::vec![0.0; nd * nd];
    for i in 0..nd {
        for (j, &dj) in diff.iter().enumerate() {
            a[i * nd + j] = fx[i * n + dj];
        }
    }
    if na == 0 {
        return Ok(a);
    }
    let gx = problem.algebraic_jacobian(t, p, x);
    let mut gz = alloc::vec![0.0; na * na];
    for i in 0..na {
        for (j, &aj) in alg.iter().enumerate() {
            gz[i * na + j] = gx[i * n + aj];
        }
    }
    // dz/dy = −g_z⁻¹ g_y, one column per differential state
    for (j, &dj) in diff.iter().enumerate() {
        let gy: Vec<f64> = (0..na).map(|i| -gx[i * n + dj]).collect();
        let dz = linalg::solve(&gz, &gy)
            .ok_or_else(|| Error::PreconditionViolation(format!("algebraic Jacobian singular at t = {t}")))?;
        for i in 0..nd {
            a[i * nd + j] += alg.iter().zip(&dz).map(|(&ak, dzk)| fx[i * n + ak] * dzk).sum::<f64>();
        }
    }
    Ok(a)
}

/// Linearizes at the trajectory midpoint and measures the drift `r_max` of
/// the Jacobian over `n_samples` evenly spaced trajectory times.
pub fn linearize(
    problem: &ParametricDaeProblem,
    p: &[f64],
    traj: &Trajectory,
    n_samples: usize,
) -> Result<LinearizationData> {
    let (t0, tf) = (traj.times()[0], traj.final_time());
    let tm = 0.5 * (t0 + tf);
    let a0 = reduced_jacobian(problem, tm, p, &traj.eval(tm))?;
    let mut lin = LinearizationData::from_matrix(a0, problem.n_differential())?;
    let samples = n_samples.max(2);
    for k in 0..samples {
        let t = t0 + (tf - t0) * k as f64 / (samples - 1) as f64;
        let a = reduced_jacobian(problem, t, p, &traj.eval(t))?;
        for (x, y) in a.iter().zip(&lin.a0) {
            lin.r_max = lin.r_max.max((x - y).abs());
        }
    }
    Ok(lin)
}

#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub linearization: LinearizationData,
    pub delta_max: f64,
    pub horizon: f64,
}

impl BoundInputs {
    pub fn new(linearization: LinearizationData, delta_max: f64, horizon: f64) -> Result<Self> {
        if !(delta_max >= 0.0) || !(horizon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bound needs delta_max >= 0 and horizon > 0 (got {delta_max}, {horizon})"
            )));
        }
        Ok(Self {
            linearization,
            delta_max,
            horizon,
        })
    }
}

/// `‖P‖∞ · δ/c · (e^{cℏ} − 1)` with `c = ā₁ + n·r_max`, or its limit
/// `‖P‖∞ · δ · ℏ` when `|c| < 1e-12`.
pub fn global_bound(inputs: &BoundInputs) -> f64 {
    let lin = &inputs.linearization;
    bound_value(
        lin.p_norm,
        lin.a1_bar,
        lin.r_max,
        lin.n,
        inputs.delta_max,
        inputs.horizon,
    )
}

pub fn bound_value(p_norm: f64, a1_bar: f64, r_max: f64, n: usize, delta_max: f64, horizon: f64) -> f64 {
    let c = a1_bar + n as f64 * r_max;
    if c.abs() < 1e-12 {
        p_norm * delta_max * horizon
    } else {
        p_norm * delta_max * libm::expm1(c * horizon) / c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;

    #[test]
    fn zero_residual_gives_zero_bound() {
        assert_eq!(bound_value(3.0, -1.0, 0.2, 2, 0.0, 0.5), 0.0);
    }

    #[test]
    fn limit_at_removable_singularity() {
        let lim = bound_value(2.0, 0.0, 0.0, 1, 0.3, 0.7);
        assert!((lim - 2.0 * 0.3 * 0.7).abs() < 1e-15);
        for c in [1e-10, -1e-10] {
            let v = bound_value(2.0, c, 0.0, 1, 0.3, 0.7);
            assert!((v - lim).abs() / lim < 1e-6);
        }
    }

    #[test]
    fn monotone_in_inputs() {
        let base = bound_value(1.5, -0.4, 0.1, 2, 0.01, 0.2);
        assert!(bound_value(1.5, -0.4, 0.1, 2, 0.02, 0.2) > base);
        assert!(bound_value(1.5, -0.4, 0.1, 2, 0.01, 0.3) > base);
        assert!(bound_value(1.6, -0.4, 0.1, 2, 0.01, 0.2) > base);
    }

    #[test]
    fn diagonal_matrix_has_unit_factor() {
        let lin = LinearizationData::from_matrix(alloc::vec![-1.0, 0.0, 0.0, -2.0], 2).unwrap();
        assert!((lin.p_norm - 1.0).abs() < 1e-12);
        assert!((lin.a1_bar + 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_inverse_has_unit_rows() {
        let a = alloc::vec![-1.0, 3.0, 0.5, -2.0];
        let lin = LinearizationData::from_matrix(a.clone(), 2).unwrap();
        // recompute P⁻¹ from the scaled P and check its rows
        let p = &lin.p;
        let det = p[0] * p[3] - p[1] * p[2];
        let inv = [p[3] / det, -p[1] / det, -p[2] / det, p[0] / det];
        for i in 0..2 {
            let s = inv[2 * i].norm() + inv[2 * i + 1].norm();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_system_linearizes_exactly() {
        let pr = ParametricDaeProblem::explicit_ode(
            "lin",
            2,
            (0.0, 1.0),
            alloc::vec![0.0],
            alloc::vec![1.0],
            alloc::sync::Arc::new(|_, p: &[f64], x: &[f64], out: &mut [f64]| {
                out[0] = -x[0] + 2.0 * x[1] + p[0];
                out[1] = -3.0 * x[1];
            }),
            alloc::sync::Arc::new(|_: &[f64], x0: &mut [f64]| x0.fill(1.0)),
        )
        .unwrap();
        let traj = crate::integrate::reference_solve(&pr, &[0.5]).unwrap();
        let lin = linearize(&pr, &[0.5], &traj, 20).unwrap();
        let expect = [-1.0, 2.0, 0.0, -3.0];
        for (a, b) in lin.a0.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(lin.r_max < 1e-6);
    }

    #[test]
    fn repeated_spectrum_is_a_precondition_violation() {
        let (pr, _) = problems::make_bidiagonal_problem(2).unwrap();
        let traj = crate::integrate::reference_solve(&pr, &[0.5, 0.5]).unwrap();
        let err = linearize(&pr, &[0.5, 0.5], &traj, 10).unwrap_err();
        assert!(matches!(err, Error::PreconditionViolation(_)));
    }

    #[test]
    fn scalar_problem_linearization() {
        let (pr, _) = problems::make_scalar_problem();
        let p = [-0.6];
        let traj = crate::integrate::reference_solve(&pr, &p).unwrap();
        let lin = linearize(&pr, &p, &traj, 50).unwrap();
        let x = traj.eval(0.45)[0];
        let expect = 4.0 * x * x * x - 6.0 * x - 1.0;
        assert!((lin.a0[0] - expect).abs() < 1e-8);
        assert!(lin.r_max > 0.0);
        assert!((lin.p_norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cantilever_reduces_to_rotation() {
        let (pr, _) = problems::make_cantilever_problem();
        let traj = crate::integrate::reference_solve(&pr, &[3.5]).unwrap();
        let lin = linearize(&pr, &[3.5], &traj, 20).unwrap();
        assert_eq!(lin.n, 2);
        assert!(lin.a1_bar.abs() < 1e-9);
        assert!(lin.r_max < 1e-9);
    }
}

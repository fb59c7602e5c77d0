use daeopt_core::integrate::{detect_degeneracy, integrate, reference_solve, SolverConfig};
use daeopt_core::problems::{make_bidiagonal_problem, make_cantilever_problem, make_scalar_problem, Benchmark};
use daeopt_core::rng;
use nalgebra::{DMatrix, DVector};

fn bidiag_matrix(n: usize) -> DMatrix<f64> {
    let a = 5.0 * n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -a
        } else if i == j + 1 {
            a
        } else {
            0.0
        }
    })
}

/// `x(1) = e^A 1 + A⁻¹ (e^A − I) p`.
fn bidiag_closed_form(p: &[f64]) -> DVector<f64> {
    let n = p.len();
    let a = bidiag_matrix(n);
    let e = a.clone().exp();
    let ones = DVector::from_element(n, 1.0);
    let pv = DVector::from_column_slice(p);
    let forcing = a.lu().solve(&((&e - DMatrix::identity(n, n)) * pv)).unwrap();
    &e * ones + forcing
}

fn draw(r: &mut rng::SeededRng, n: usize) -> Vec<f64> {
    rng::uniform_in_box(r, &vec![0.0; n], &vec![1.0; n])
}

#[test]
fn bidiagonal_matches_matrix_exponential() {
    let cfg = SolverConfig::default();
    let mut r = rng::seeded(7);
    for n in 1..=6 {
        let (problem, _) = make_bidiagonal_problem(n).unwrap();
        for _ in 0..5 {
            let p = draw(&mut r, n);
            let exact = bidiag_closed_form(&p);
            let traj = integrate(&problem, &p, &cfg).unwrap();
            for (i, &x) in traj.final_state().iter().enumerate() {
                let tol = 10.0 * (cfg.rel_tol * exact[i].abs() + cfg.abs_tol);
                assert!((x - exact[i]).abs() <= tol, "n={n} i={i}: {x} vs {}", exact[i]);
            }
        }
    }
}

#[test]
fn scalar_bidiagonal_closed_form() {
    let (problem, _) = make_bidiagonal_problem(1).unwrap();
    let traj = reference_solve(&problem, &[0.5]).unwrap();
    let exact = 0.1 + 0.9 * (-5.0f64).exp();
    assert!((traj.final_state()[0] - exact).abs() < 1e-12);
}

#[test]
fn tighter_tolerance_never_hurts() {
    let (problem, _) = make_bidiagonal_problem(3).unwrap();
    let p = [0.3, 0.7, 0.1];
    let exact = bidiag_closed_form(&p);
    let mut prev = f64::INFINITY;
    let mut tol = 1e-4;
    for _ in 0..12 {
        let cfg = SolverConfig {
            rel_tol: tol,
            abs_tol: tol * 1e-2,
            ..SolverConfig::default()
        };
        let traj = integrate(&problem, &p, &cfg).unwrap();
        let err = traj
            .final_state()
            .iter()
            .zip(exact.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= prev, "tol {tol:e}: {err:e} > {prev:e}");
        prev = err;
        tol *= 0.5;
    }
}

#[test]
fn max_step_equals_largest_gap() {
    for b in [Benchmark::Scalar, Benchmark::Cantilever, Benchmark::Bidiagonal(2)] {
        let (problem, _) = b.build().unwrap();
        let p: Vec<f64> = problem
            .lower()
            .iter()
            .zip(problem.upper())
            .map(|(l, u)| 0.5 * (l + u))
            .collect();
        let traj = reference_solve(&problem, &p).unwrap();
        let gap = traj.times().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert_eq!(traj.max_step(), gap);
        assert!(traj.times().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(traj.times()[0], problem.t_span().0);
        assert_eq!(traj.final_time(), problem.t_span().1);
    }
}

#[test]
fn initial_states_are_consistent() {
    let mut r = rng::seeded(11);
    for b in [Benchmark::Scalar, Benchmark::Cantilever, Benchmark::Bidiagonal(4)] {
        let (problem, _) = b.build().unwrap();
        let mut g = vec![0.0; problem.n_algebraic()];
        for _ in 0..100 {
            let p = rng::uniform_in_box(&mut r, problem.lower(), problem.upper());
            let x0 = problem.initial_state(&p);
            problem.eval_algebraic(problem.t_span().0, &p, &x0, &mut g);
            assert!(g.iter().all(|v| v.abs() <= 1e-10), "{b}: {g:?}");
        }
    }
}

#[test]
fn cantilever_branch_solves_both_equations() {
    let (problem, _) = make_cantilever_problem();
    let mut r = rng::seeded(12);
    let mut f = vec![0.0; 2];
    let mut g = vec![0.0; 2];
    for _ in 0..1000 {
        let t = rng::uniform_in_box(&mut r, &[0.0], &[5.0])[0];
        let p = rng::uniform_in_box(&mut r, &[3.0], &[4.0]);
        let c = 1.0 / (p[0] + 1.0);
        // y2 = (1 − sin x) c, y1 = −y2; states (y1, y1', y2, y2')
        let (y2, dy2, ddy2) = ((1.0 - t.sin()) * c, -t.cos() * c, t.sin() * c);
        let x = [-y2, -dy2, y2, dy2];
        problem.eval_dynamics(t, &p, &x, &mut f);
        problem.eval_algebraic(t, &p, &x, &mut g);
        assert!((f[0] + dy2).abs() < 1e-12);
        assert!((f[1] + ddy2).abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn cantilever_solve_follows_branch() {
    let (problem, _) = make_cantilever_problem();
    for p in [3.0, 3.5, 4.0] {
        let traj = reference_solve(&problem, &[p]).unwrap();
        let expected = (1.0 - 5f64.sin()) / (p + 1.0);
        assert!((traj.final_state()[2] - expected).abs() < 1e-8);
        let mut g = vec![0.0; 2];
        for i in 0..traj.len() {
            problem.eval_algebraic(traj.times()[i], &[p], traj.state(i), &mut g);
            assert!(g.iter().all(|v| v.abs() <= SolverConfig::reference().newton_tol));
        }
    }
}

#[test]
fn degeneracy_flagged_near_quarter_period() {
    let (problem, _) = make_cantilever_problem();
    let traj = reference_solve(&problem, &[3.3]).unwrap();
    let report = detect_degeneracy(&problem, &[3.3], &traj, 1e-5);
    assert!(report.near(std::f64::consts::FRAC_PI_2, 0.05));
    let (scalar, _) = make_scalar_problem();
    let t = reference_solve(&scalar, &[-0.6]).unwrap();
    assert!(!detect_degeneracy(&scalar, &[-0.6], &t, 1e-5).is_degenerate());
}

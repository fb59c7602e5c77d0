use std::cell::RefCell;
use std::sync::Arc;

use daeopt_core::bounds::{bound_value, LinearizationData};
use daeopt_core::integrate::Trajectory;
use daeopt_core::neural::{Affine, Mlp};
use daeopt_core::optimize::{
    generator_loss, map_to_box, newton_refine, random_walk_refine, ObjectiveGenerator, SurrogateObjective,
};
use daeopt_core::problems::{eval_objective_on_trajectory, make_cantilever_problem, ObjectiveSpec};
use daeopt_core::surrogate::StateModel;
use daeopt_core::GaussLegendre;
use proptest::prelude::*;

proptest! {
    #[test]
    fn generated_params_stay_in_box(
        u in prop::collection::vec(-1e6f64..1e6, 1..5),
        lo in -10.0f64..10.0,
        width in 1e-3f64..10.0,
    ) {
        let m = u.len();
        let lower = vec![lo; m];
        let upper = vec![lo + width; m];
        for (v, (l, h)) in map_to_box(&u, &lower, &upper).iter().zip(lower.iter().zip(&upper)) {
            prop_assert!(l <= v && v <= h);
        }
    }

    #[test]
    fn random_walk_keeps_the_best(
        p0 in prop::collection::vec(-1.0f64..1.0, 1..4),
        c in prop::collection::vec(-1.0f64..1.0, 4),
        seed in any::<u64>(),
    ) {
        let m = p0.len();
        let seen = RefCell::new(Vec::new());
        let f = |p: &[f64]| {
            let v: f64 = p.iter().zip(&c).map(|(a, b)| (a - b).powi(2) + (5.0 * a).sin()).sum();
            seen.borrow_mut().push(v);
            Ok(v)
        };
        let out = random_walk_refine(&p0, &vec![-1.0; m], &vec![1.0; m], f, 100, 0.1, seed);
        let seen = seen.into_inner();
        prop_assert!(out.value <= seen[0]);
        prop_assert_eq!(out.value, seen.iter().copied().fold(f64::INFINITY, f64::min));
        prop_assert!(out.p.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn newton_solves_quadratics_in_one_step(
        b in prop::collection::vec(-1.0f64..1.0, 25),
        c in prop::collection::vec(-0.5f64..0.5, 5),
        p0 in prop::collection::vec(-0.9f64..0.9, 5),
        m in 1usize..=5,
    ) {
        // H = B Bᵀ + I is SPD
        let mut h = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                h[i * m + j] = (0..m).map(|k| b[i * 5 + k] * b[j * 5 + k]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }
        }
        let c = &c[..m];
        let f = |p: &[f64]| {
            let d: Vec<f64> = p.iter().zip(c).map(|(a, b)| a - b).collect();
            Ok(0.5 * (0..m).map(|i| (0..m).map(|j| d[i] * h[i * m + j] * d[j]).sum::<f64>()).sum::<f64>())
        };
        let out = newton_refine(&p0[..m], &vec![-1.0; m], &vec![1.0; m], f, 1, 1e-3);
        prop_assert_eq!(out.iterations, 1);
        for (a, b) in out.p.iter().zip(c) {
            prop_assert!((a - b).abs() < 1e-6, "{:?} vs {:?}", out.p, c);
        }
    }

    #[test]
    fn perturbation_bound_holds_for_stable_pairs(
        l1 in -3.0f64..-0.05,
        gap in 0.05f64..3.0,
        v in prop::collection::vec(-1.0f64..1.0, 4),
        delta in 1e-4f64..1.0,
        hbar in 0.05f64..3.0,
        phase in prop::collection::vec(0.0f64..6.3, 2),
        freq in prop::collection::vec(0.0f64..5.0, 2),
    ) {
        let pmat = [1.0 + v[0].abs(), v[1], v[2], 1.0 + v[3].abs()];
        prop_assume!((pmat[0] * pmat[3] - pmat[1] * pmat[2]).abs() > 0.2);
        let a = similar_diag(pmat, [l1, l1 - gap]);
        let lin = LinearizationData::from_matrix(a.to_vec(), 2).unwrap();
        let bound = bound_value(lin.p_norm, lin.a1_bar, lin.r_max, 2, delta, hbar);
        let r = |t: f64| [delta * (freq[0] * t + phase[0]).sin(), delta * (freq[1] * t + phase[1]).cos()];
        let measured = perturbed_sup_error(&a, r, hbar);
        prop_assert!(measured <= bound * (1.0 + 1e-9), "{} > {}", measured, bound);
    }
}

/// `P diag(λ) P⁻¹` for a 2×2 `P`.
fn similar_diag(p: [f64; 4], l: [f64; 2]) -> [f64; 4] {
    let det = p[0] * p[3] - p[1] * p[2];
    let inv = [p[3] / det, -p[1] / det, -p[2] / det, p[0] / det];
    let pl = [p[0] * l[0], p[1] * l[1], p[2] * l[0], p[3] * l[1]];
    [
        pl[0] * inv[0] + pl[1] * inv[2],
        pl[0] * inv[1] + pl[1] * inv[3],
        pl[2] * inv[0] + pl[3] * inv[2],
        pl[2] * inv[1] + pl[3] * inv[3],
    ]
}

/// Sup-norm of `e' = A e + r(t)`, `e(0) = 0`, over `[0, hbar]` by classical RK4.
fn perturbed_sup_error(a: &[f64; 4], r: impl Fn(f64) -> [f64; 2], hbar: f64) -> f64 {
    let rhs = |t: f64, e: [f64; 2]| {
        let f = r(t);
        [a[0] * e[0] + a[1] * e[1] + f[0], a[2] * e[0] + a[3] * e[1] + f[1]]
    };
    let steps = 4000;
    let h = hbar / steps as f64;
    let (mut e, mut t, mut sup) = ([0.0f64; 2], 0.0, 0.0f64);
    for _ in 0..steps {
        let k1 = rhs(t, e);
        let k2 = rhs(t + 0.5 * h, [e[0] + 0.5 * h * k1[0], e[1] + 0.5 * h * k1[1]]);
        let k3 = rhs(t + 0.5 * h, [e[0] + 0.5 * h * k2[0], e[1] + 0.5 * h * k2[1]]);
        let k4 = rhs(t + h, [e[0] + h * k3[0], e[1] + h * k3[1]]);
        for i in 0..2 {
            e[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        t += h;
        sup = sup.max(e[0].abs()).max(e[1].abs());
    }
    sup
}

#[test]
fn removable_singularity_limit() {
    let (p_norm, delta, hbar) = (1.7, 0.03, 0.4);
    let limit = p_norm * delta * hbar;
    for c in [1e-10, -1e-10] {
        let v = bound_value(p_norm, c, 0.0, 2, delta, hbar);
        assert!(((v - limit) / limit).abs() < 1e-6);
    }
    assert_eq!(bound_value(p_norm, 0.0, 0.0, 2, delta, hbar), limit);
}

fn small_net(seed: u64) -> Mlp {
    let mut net = Mlp::init(&[2, 6, 4], seed).unwrap();
    net.set_input_norm(Affine::from_range(&[0.0, 3.0], &[5.0, 4.0]))
        .unwrap();
    net
}

#[test]
fn generator_loss_ignores_seed_order() {
    let (_, obj) = make_cantilever_problem();
    let net = small_net(3);
    let gamma = [0.0; 4];
    let sobj = SurrogateObjective::new(&net, &gamma, &obj, (0.0, 5.0), 16).unwrap();
    let generator = ObjectiveGenerator::new(vec![3.0], vec![4.0], 2, 9).unwrap();
    let mut seeds: Vec<Vec<f64>> = (0..40)
        .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
        .collect();
    let base = generator_loss(&generator, &sobj, &seeds).unwrap();
    seeds.reverse();
    seeds.swap(3, 17);
    let permuted = generator_loss(&generator, &sobj, &seeds).unwrap();
    assert!((base - permuted).abs() <= 1e-14 * base.abs().max(1e-300));
}

#[test]
fn gauss_legendre_converges_faster_than_fourth_order() {
    let f = |t: f64| t.exp() * (3.0 * t).cos();
    // ∫₀^0.9 eᵗ cos 3t dt
    let exact = {
        let prim = |t: f64| t.exp() * ((3.0 * t).cos() + 3.0 * (3.0 * t).sin()) / 10.0;
        prim(0.9) - prim(0.0)
    };
    let err = |n: usize| (GaussLegendre::new(n).unwrap().integrate(0.0, 0.9, f) - exact).abs();
    for n in [2usize, 3, 4] {
        assert!(err(2 * n) < err(n) / 16.0, "n={n}: {} vs {}", err(2 * n), err(n));
    }
    assert!(err(12) < 1e-14);
}

#[test]
fn surrogate_objective_matches_trajectory_quadrature() {
    let (_, obj) = make_cantilever_problem();
    let net = small_net(5);
    let p = [3.4];
    // the network sampled densely and treated as a trajectory
    let times: Vec<f64> = (0..=4000).map(|i| 5.0 * i as f64 / 4000.0).collect();
    let mut states = Vec::new();
    let mut rates = Vec::new();
    let (mut x, mut xd) = (vec![0.0; 4], vec![0.0; 4]);
    for &t in &times {
        net.state_and_rate(t, &p, &mut x, &mut xd);
        states.extend_from_slice(&x);
        rates.extend_from_slice(&xd);
    }
    let traj = Trajectory::from_samples(4, times, states, rates).unwrap();
    let gamma = [0.0; 4];
    let rule = GaussLegendre::new(64).unwrap();
    let on_traj = eval_objective_on_trajectory(&obj, &traj, &p, &rule, (0.0, 5.0)).unwrap();
    let direct = SurrogateObjective::new(&net, &gamma, &obj, (0.0, 5.0), 64)
        .unwrap()
        .value(&p, None)
        .unwrap();
    assert!(
        (on_traj - direct).abs() < 1e-9 * (1.0 + direct.abs()),
        "{on_traj} vs {direct}"
    );
    let coarse = SurrogateObjective::new(&net, &gamma, &obj, (0.0, 5.0), 4)
        .unwrap()
        .value(&p, None)
        .unwrap();
    let mid = SurrogateObjective::new(&net, &gamma, &obj, (0.0, 5.0), 8)
        .unwrap()
        .value(&p, None)
        .unwrap();
    assert!((mid - direct).abs() < (coarse - direct).abs());
}

#[test]
fn terminal_only_objective_reads_network_endpoint() {
    let net = small_net(8);
    let obj = ObjectiveSpec::zero().with_terminal(Arc::new(|_p, x| x[0]));
    let gamma = [0.0; 4];
    let v = SurrogateObjective::new(&net, &gamma, &obj, (0.0, 5.0), 32)
        .unwrap()
        .value(&[3.2], None)
        .unwrap();
    assert_eq!(v, net.forward(&[5.0, 3.2]).unwrap()[0]);
}

//! Minimal MLP engine: tanh hidden layers, linear output, forward-mode input
//! derivatives, reverse-mode weight gradients, and Adam.

mod adam;
mod dual;
mod mlp;

pub use adam::AdamState;
pub use dual::{Dual, Scalar};
pub use mlp::{Affine, Mlp};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::Rng;

    fn random_net(seed: u64, sizes: &[usize]) -> Mlp {
        let mut net = Mlp::init(sizes, seed).unwrap();
        let mut r = rng::seeded(seed + 1000);
        for w in net.params_mut() {
            *w += 0.3 * rng::symmetric_unit(&mut r);
        }
        let ni = sizes[0];
        let no = sizes[sizes.len() - 1];
        net.set_input_norm(Affine {
            shift: (0..ni).map(|_| r.random::<f64>() - 0.5).collect(),
            scale: (0..ni).map(|_| 0.5 + r.random::<f64>()).collect(),
        })
        .unwrap();
        net.set_output_norm(Affine {
            shift: (0..no).map(|_| r.random::<f64>() - 0.5).collect(),
            scale: (0..no).map(|_| 0.5 + r.random::<f64>()).collect(),
        })
        .unwrap();
        net
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs().max(b.abs())).max(1e-3)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = Mlp::init(&[2, 4, 3], 1).unwrap();
        net.params_mut().fill(0.0);
        assert_eq!(net.forward(&[0.3, -2.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(net.grad_input(&[0.3, -2.0]).unwrap(), vec![0.0; 6]);
    }

    #[test]
    fn single_affine_layer() {
        let net = Mlp::from_parts(vec![1, 1], vec![2.0, 1.0], Affine::identity(1), Affine::identity(1)).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
        assert_eq!(net.grad_input(&[-11.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn tanh_saturation_is_bounded() {
        // hidden weights huge, output weights 1 and 2 with bias 0.5
        let net = Mlp::from_parts(
            vec![1, 2, 1],
            vec![1e6, -1e6, 0.0, 0.0, 1.0, 2.0, 0.5],
            Affine::identity(1),
            Affine::identity(1),
        )
        .unwrap();
        for x in [-5.0, -1e-3, 0.0, 1e-3, 5.0] {
            let y = net.forward(&[x]).unwrap()[0];
            assert!((0.5 - 3.0..=0.5 + 3.0).contains(&y));
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = Mlp::init(&[2, 3, 1], 0).unwrap();
        assert!(net.forward(&[1.0]).is_err());
        assert!(net.grad_input(&[1.0, 2.0, 3.0]).is_err());
        assert!(Mlp::init(&[], 0).is_err());
        assert!(Mlp::init(&[3, 0, 1], 0).is_err());
    }

    #[test]
    fn init_is_seeded_and_glorot_bounded() {
        let a = Mlp::init(&[3, 8, 2], 42).unwrap();
        let b = Mlp::init(&[3, 8, 2], 42).unwrap();
        let c = Mlp::init(&[3, 8, 2], 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        let l0 = libm::sqrt(6.0 / 11.0);
        assert!(a.params()[..24].iter().all(|w| w.abs() <= l0));
        let l1 = libm::sqrt(6.0 / 10.0);
        assert!(a.params()[32..48].iter().all(|w| w.abs() <= l1));
        let x = [0.1, 0.2, 0.3];
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }

    #[test]
    fn input_jacobian_matches_central_differences() {
        let h = 1e-5;
        for seed in 0..50 {
            let net = random_net(seed, &[3, 6, 5, 2]);
            let mut r = rng::seeded(seed);
            let x: Vec<f64> = (0..3).map(|_| rng::symmetric_unit(&mut r)).collect();
            let jac = net.grad_input(&x).unwrap();
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let (fp, fm) = (net.forward(&xp).unwrap(), net.forward(&xm).unwrap());
                for k in 0..2 {
                    let fd = (fp[k] - fm[k]) / (2.0 * h);
                    assert!(rel_err(jac[k * 3 + j], fd) < 1e-6, "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn directional_derivative_along_a_line() {
        let net = random_net(3, &[2, 7, 3]);
        let x = [0.2, -0.4];
        let d = [0.6, -0.8];
        let jac = net.grad_input(&x).unwrap();
        let xs = [Dual::new(x[0], d[0]), Dual::new(x[1], d[1])];
        let mut out = [Dual::default(); 3];
        net.forward_generic(&xs, &mut out);
        for k in 0..3 {
            let jd = jac[k * 2] * d[0] + jac[k * 2 + 1] * d[1];
            assert!((out[k].eps - jd).abs() < 1e-13);
        }
    }

    #[test]
    fn stationary_at_zero_network() {
        let mut net = Mlp::init(&[2, 4, 2], 5).unwrap();
        net.params_mut().fill(0.0);
        let (loss, g) = net
            .grad_weights(&[0.1, 0.2, -0.3, 0.4], |_, y, gy| {
                gy[0] = 2.0 * y[0];
                gy[1] = 2.0 * y[1];
                y[0] * y[0] + y[1] * y[1]
            })
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_weight_gradient() {
        let net = Mlp::from_parts(vec![1, 1], vec![0.0, 0.0], Affine::identity(1), Affine::identity(1)).unwrap();
        let (_, g) = net
            .grad_weights(&[1.0], |_, y, gy| {
                gy[0] = 2.0 * (y[0] - 1.0);
                (y[0] - 1.0) * (y[0] - 1.0)
            })
            .unwrap();
        assert_eq!(g[0], -2.0);
    }

    fn loss_value(net: &Mlp, inputs: &[f64], targets: &[f64]) -> f64 {
        inputs
            .chunks(2)
            .zip(targets.chunks(2))
            .map(|(x, t)| {
                let (y, yt) = net.forward_with_tangent(x, 0).unwrap();
                (y[0] - t[0]).powi(2) + 0.5 * (yt[1] - t[1]).powi(2) + y[1] * yt[0]
            })
            .sum()
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let h = 1e-6;
        for seed in 0..50 {
            let mut net = random_net(seed, &[2, 5, 4, 2]);
            let mut r = rng::seeded(seed + 7);
            let inputs: Vec<f64> = (0..8).map(|_| rng::symmetric_unit(&mut r)).collect();
            let targets: Vec<f64> = (0..8).map(|_| rng::symmetric_unit(&mut r)).collect();
            let (loss, grads) = net
                .grad_weights_with_tangent(&inputs, 0, |i, y, yt, gy, gyt| {
                    let t = &targets[2 * i..2 * i + 2];
                    gy[0] = 2.0 * (y[0] - t[0]);
                    gy[1] = yt[0];
                    gyt[0] = y[1];
                    gyt[1] = yt[1] - t[1];
                    (y[0] - t[0]).powi(2) + 0.5 * (yt[1] - t[1]).powi(2) + y[1] * yt[0]
                })
                .unwrap();
            assert!((loss - loss_value(&net, &inputs, &targets)).abs() < 1e-12);
            for w in 0..net.params().len() {
                let orig = net.params()[w];
                net.params_mut()[w] = orig + h;
                let lp = loss_value(&net, &inputs, &targets);
                net.params_mut()[w] = orig - h;
                let lm = loss_value(&net, &inputs, &targets);
                net.params_mut()[w] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    rel_err(grads[w], fd) < 1e-5,
                    "seed {seed} weight {w}: {} vs {fd}",
                    grads[w]
                );
            }
        }
    }

    #[test]
    fn non_finite_loss_reports_batch_index() {
        let net = Mlp::init(&[1, 2, 1], 0).unwrap();
        let err = net
            .grad_weights(&[0.0, 1.0, 2.0], |i, _, _| if i == 2 { f64::NAN } else { 0.0 })
            .unwrap_err();
        assert_eq!(err, crate::Error::NonFinite { what: "loss", index: 2 });
    }
}

use alloc::vec::Vec;

use crate::neural::Mlp;
use crate::problems::ParametricDaeProblem;
use crate::{Error, Result};

use super::dataset::{Record, TrainingDataset};
use super::StateModel;

/// Weights of the initial, collocation and exact-data terms.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct LossWeights {
    pub initial: f64,
    pub collocation: f64,
    pub exact: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            initial: 1.0,
            collocation: 1.0,
            exact: 1.0,
        }
    }
}

/// Units in which the loss terms are measured. Data errors are divided by
/// `state`, differential residuals by `state / time`, and algebraic
/// residuals by `algebraic`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossScales {
    pub state: Vec<f64>,
    pub time: f64,
    pub algebraic: Vec<f64>,
}

impl LossScales {
    pub fn unit(problem: &ParametricDaeProblem) -> Self {
        Self {
            state: alloc::vec![1.0; problem.state_dim()],
            time: 1.0,
            algebraic: alloc::vec![1.0; problem.n_algebraic()],
        }
    }

    /// State scales from the output normalization, time scale from the half
    /// span, algebraic scales from the largest `Σ_k |∂g_a/∂x_k| s_k` seen on
    /// the exact records.
    pub fn from_normalization(problem: &ParametricDaeProblem, state: Vec<f64>, exact: &[Record]) -> Self {
        let (t0, tf) = problem.t_span();
        let n = problem.state_dim();
        let na = problem.n_algebraic();
        let mut algebraic = alloc::vec![0.0f64; na];
        for r in exact {
            let jac = problem.algebraic_jacobian(r.t, &r.p, &r.x);
            for a in 0..na {
                let s: f64 = (0..n).map(|k| jac[a * n + k].abs() * state[k]).sum();
                algebraic[a] = algebraic[a].max(s);
            }
        }
        for a in algebraic.iter_mut() {
            if !(*a > 1e-300) {
                *a = 1.0;
            }
        }
        Self {
            state,
            time: 0.5 * (tf - t0),
            algebraic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub initial: f64,
    pub collocation: f64,
    pub exact: f64,
    pub total: f64,
}

/// Scaled collocation residual: differential rows `(ẋ_d − f_d)·τ/s_d`, then
/// algebraic rows `g_a / c_a`.
fn residual(
    problem: &ParametricDaeProblem,
    scales: &LossScales,
    t: f64,
    p: &[f64],
    x: &[f64],
    xdot: &[f64],
    f: &mut [f64],
    g: &mut [f64],
    out: &mut [f64],
) {
    let nd = problem.n_differential();
    problem.eval_dynamics(t, p, x, f);
    problem.eval_algebraic(t, p, x, g);
    for (d, &i) in problem.differential_indices().iter().enumerate() {
        out[d] = (xdot[i] - f[d]) * scales.time / scales.state[i];
    }
    for (a, ga) in g.iter().enumerate() {
        out[nd + a] = ga / scales.algebraic[a];
    }
}

fn data_term<M: StateModel + ?Sized>(model: &M, records: &[Record], scales: &LossScales) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let n = model.state_dim();
    let mut y = alloc::vec![0.0; n];
    let mut sum = 0.0;
    for r in records {
        model.state(r.t, &r.p, &mut y);
        for k in 0..n {
            let e = (y[k] - r.x[k]) / scales.state[k];
            sum += e * e;
        }
    }
    sum / (records.len() * n) as f64
}

/// `w_I·MSE_I + w_F·MSE_F + w_B·MSE_B` over the whole dataset.
pub fn composite_loss<M: StateModel + ?Sized>(
    model: &M,
    problem: &ParametricDaeProblem,
    dataset: &TrainingDataset,
    weights: &LossWeights,
    scales: &LossScales,
) -> Result<LossParts> {
    let n = problem.state_dim();
    Error::check_len("model state", n, model.state_dim())?;
    let initial = data_term(model, &dataset.initial, scales);
    let exact = data_term(model, &dataset.exact, scales);
    let mut collocation = 0.0;
    if !dataset.collocation.is_empty() {
        let (nd, na) = (problem.n_differential(), problem.n_algebraic());
        let (mut x, mut xdot) = (alloc::vec![0.0; n], alloc::vec![0.0; n]);
        let (mut f, mut g, mut res) = (alloc::vec![0.0; nd], alloc::vec![0.0; na], alloc::vec![0.0; nd + na]);
        for r in &dataset.collocation {
            model.state_and_rate(r.t, &r.p, &mut x, &mut xdot);
            residual(problem, scales, r.t, &r.p, &x, &xdot, &mut f, &mut g, &mut res);
            collocation += res.iter().map(|v| v * v).sum::<f64>();
        }
        collocation /= (dataset.collocation.len() * n) as f64;
    }
    let total = weights.initial * initial + weights.collocation * collocation + weights.exact * exact;
    if !total.is_finite() {
        return Err(Error::NonFinite {
            what: "composite loss",
            index: 0,
        });
    }
    Ok(LossParts {
        initial,
        collocation,
        exact,
        total,
    })
}

/// Minibatch in network input layout: rows `(t, p…)`.
#[derive(Debug, Default, Clone)]
pub(crate) struct Batch {
    pub data_inputs: Vec<f64>,
    pub data_targets: Vec<f64>,
    /// Per-row weight of the squared scaled data error.
    pub data_weights: Vec<f64>,
    pub colloc_inputs: Vec<f64>,
    pub colloc_weight: f64,
}

impl Batch {
    pub fn clear(&mut self) {
        self.data_inputs.clear();
        self.data_targets.clear();
        self.data_weights.clear();
        self.colloc_inputs.clear();
    }

    pub fn push_data(&mut self, r: &Record, weight: f64) {
        self.data_inputs.push(r.t);
        self.data_inputs.extend_from_slice(&r.p);
        self.data_targets.extend_from_slice(&r.x);
        self.data_weights.push(weight);
    }

    pub fn push_colloc(&mut self, r: &Record) {
        self.colloc_inputs.push(r.t);
        self.colloc_inputs.extend_from_slice(&r.p);
    }
}

/// Loss and weight gradient of one minibatch.
pub(crate) fn batch_gradient(
    net: &Mlp,
    problem: &ParametricDaeProblem,
    batch: &Batch,
    scales: &LossScales,
) -> Result<(f64, Vec<f64>)> {
    let n = problem.state_dim();
    let ni = net.input_dim();
    let (mut loss, mut grad) = if batch.data_weights.is_empty() {
        (0.0, alloc::vec![0.0; net.params().len()])
    } else {
        net.grad_weights(&batch.data_inputs, |i, y, gy| {
            let w = batch.data_weights[i];
            let target = &batch.data_targets[i * n..(i + 1) * n];
            let mut l = 0.0;
            for k in 0..n {
                let s = scales.state[k];
                let e = (y[k] - target[k]) / s;
                l += w * e * e;
                gy[k] = 2.0 * w * e / s;
            }
            l
        })?
    };
    if !batch.colloc_inputs.is_empty() {
        let (nd, na) = (problem.n_differential(), problem.n_algebraic());
        let diff = problem.differential_indices();
        let (mut f, mut g, mut res) = (alloc::vec![0.0; nd], alloc::vec![0.0; na], alloc::vec![0.0; nd + na]);
        let w = batch.colloc_weight;
        let (l, gc) = net.grad_weights_with_tangent(&batch.colloc_inputs, 0, |i, y, ydot, gy, gydot| {
            let row = &batch.colloc_inputs[i * ni..(i + 1) * ni];
            let (t, p) = (row[0], &row[1..]);
            residual(problem, scales, t, p, y, ydot, &mut f, &mut g, &mut res);
            gy.fill(0.0);
            gydot.fill(0.0);
            let fx = problem.dynamics_jacobian(t, p, y);
            for (d, &i_d) in diff.iter().enumerate() {
                let c = 2.0 * w * res[d] * scales.time / scales.state[i_d];
                gydot[i_d] += c;
                for k in 0..n {
                    gy[k] -= c * fx[d * n + k];
                }
            }
            if na > 0 {
                let gx = problem.algebraic_jacobian(t, p, y);
                for a in 0..na {
                    let c = 2.0 * w * res[nd + a] / scales.algebraic[a];
                    for k in 0..n {
                        gy[k] += c * gx[a * n + k];
                    }
                }
            }
            w * res.iter().map(|v| v * v).sum::<f64>()
        })?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&gc) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

//! Parametric DAE optimization problems, objective functionals and the
//! benchmark catalog.
//!
//! A problem is the constraint half of
//!
//! ```text
//! min_p J(p) = ∫ λ(s, p, x(s, p)) ds + φ(p, x(tf, p))
//! s.t.  x_d' = f(t, p, x),  0 = g(t, p, x),  x(t0) = x0(p),  p ∈ [pL, pU]
//! ```
//!
//! with the state split into differential (`x_d`) and algebraic components.
//! Evaluators always receive the full state vector `x` in problem order.
//! Higher-order systems are reduced to first order before they get here.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::integrate::Trajectory;
use crate::quadrature::GaussLegendre;
use crate::{Error, Result};

/// `(t, p, x, out)`: writes the time derivatives of the differential states.
pub type DynamicsFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, p, x, out)`: writes the algebraic residual `g`.
pub type AlgebraicFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(p, out)`: writes the full initial state.
pub type InitialFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `(t, p, x, out)`: row-major Jacobian with respect to the full state.
pub type JacobianFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type RunningCostFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    ExplicitOde,
    SemiExplicitIndex1,
}

#[derive(Clone)]
pub struct ParametricDaeProblem {
    name: String,
    state_dim: usize,
    param_dim: usize,
    t_span: (f64, f64),
    lower: Vec<f64>,
    upper: Vec<f64>,
    kind: ProblemKind,
    differential: Vec<usize>,
    algebraic: Vec<usize>,
    dynamics: DynamicsFn,
    residual: Option<AlgebraicFn>,
    initial: InitialFn,
    dynamics_jacobian: Option<JacobianFn>,
    algebraic_jacobian: Option<JacobianFn>,
}

impl fmt::Debug for ParametricDaeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricDaeProblem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("param_dim", &self.param_dim)
            .field("t_span", &self.t_span)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("kind", &self.kind)
            .field("differential", &self.differential)
            .field("algebraic", &self.algebraic)
            .finish_non_exhaustive()
    }
}

impl ParametricDaeProblem {
    /// An explicit ODE `x' = f(t, p, x)`; every state is differential.
    pub fn explicit_ode(
        name: impl Into<String>,
        state_dim: usize,
        t_span: (f64, f64),
        lower: Vec<f64>,
        upper: Vec<f64>,
        dynamics: DynamicsFn,
        initial: InitialFn,
    ) -> Result<Self> {
        let problem = Self {
            name: name.into(),
            state_dim,
            param_dim: lower.len(),
            t_span,
            lower,
            upper,
            kind: ProblemKind::ExplicitOde,
            differential: (0..state_dim).collect(),
            algebraic: Vec::new(),
            dynamics,
            residual: None,
            initial,
            dynamics_jacobian: None,
            algebraic_jacobian: None,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// A semi-explicit index-1 DAE. `differential` and `algebraic` partition
    /// the state indices; `residual` must return one equation per algebraic state.
    pub fn semi_explicit(
        name: impl Into<String>,
        differential: Vec<usize>,
        algebraic: Vec<usize>,
        t_span: (f64, f64),
        lower: Vec<f64>,
        upper: Vec<f64>,
        dynamics: DynamicsFn,
        residual: AlgebraicFn,
        initial: InitialFn,
    ) -> Result<Self> {
        let problem = Self {
            name: name.into(),
            state_dim: differential.len() + algebraic.len(),
            param_dim: lower.len(),
            t_span,
            lower,
            upper,
            kind: ProblemKind::SemiExplicitIndex1,
            differential,
            algebraic,
            dynamics,
            residual: Some(residual),
            initial,
            dynamics_jacobian: None,
            algebraic_jacobian: None,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_dynamics_jacobian(mut self, jac: JacobianFn) -> Self {
        self.dynamics_jacobian = Some(jac);
        self
    }

    pub fn with_algebraic_jacobian(mut self, jac: JacobianFn) -> Self {
        self.algebraic_jacobian = Some(jac);
        self
    }

    fn validate(&self) -> Result<()> {
        let invalid = |msg: &str| Err(Error::InvalidProblem(msg.to_string()));
        if self.state_dim == 0 {
            return invalid("state dimension must be positive");
        }
        if self.param_dim == 0 {
            return invalid("parameter dimension must be positive");
        }
        if self.upper.len() != self.param_dim {
            return invalid("lower and upper bounds differ in length");
        }
        if self.lower.iter().zip(&self.upper).any(|(lo, hi)| !(lo < hi)) {
            return invalid("parameter bounds must satisfy lower < upper");
        }
        if !(self.t_span.0 < self.t_span.1) {
            return invalid("time span must satisfy t0 < tf");
        }
        let mut seen = alloc::vec![false; self.state_dim];
        for &i in self.differential.iter().chain(&self.algebraic) {
            if i >= self.state_dim || seen[i] {
                return invalid("state partition must be disjoint and cover every state");
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return invalid("state partition must be disjoint and cover every state");
        }
        if self.differential.is_empty() {
            return invalid("at least one differential state is required");
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn t_span(&self) -> (f64, f64) {
        self.t_span
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn differential_indices(&self) -> &[usize] {
        &self.differential
    }

    pub fn algebraic_indices(&self) -> &[usize] {
        &self.algebraic
    }

    pub fn n_differential(&self) -> usize {
        self.differential.len()
    }

    pub fn n_algebraic(&self) -> usize {
        self.algebraic.len()
    }

    pub fn check_params(&self, p: &[f64]) -> Result<()> {
        Error::check_len("parameter vector", self.param_dim, p.len())?;
        for (index, ((&value, &lower), &upper)) in p.iter().zip(&self.lower).zip(&self.upper).enumerate() {
            if !(value >= lower && value <= upper) {
                return Err(Error::ParameterOutOfBounds {
                    index,
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    /// Projects `p` onto the parameter box.
    pub fn clamp(&self, p: &mut [f64]) {
        for ((v, lo), hi) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn box_widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn initial_state(&self, p: &[f64]) -> Vec<f64> {
        let mut x = alloc::vec![0.0; self.state_dim];
        (self.initial)(p, &mut x);
        x
    }

    pub fn eval_dynamics(&self, t: f64, p: &[f64], x: &[f64], out: &mut [f64]) {
        (self.dynamics)(t, p, x, out)
    }

    /// Writes `g(t, p, x)`; a no-op for explicit ODEs.
    pub fn eval_algebraic(&self, t: f64, p: &[f64], x: &[f64], out: &mut [f64]) {
        if let Some(g) = &self.residual {
            g(t, p, x, out)
        }
    }

    /// `∂f/∂x`, row-major `n_differential × state_dim`.
    pub fn dynamics_jacobian(&self, t: f64, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut jac = alloc::vec![0.0; self.n_differential() * self.state_dim];
        match &self.dynamics_jacobian {
            Some(j) => j(t, p, x, &mut jac),
            None => central_jacobian(self.n_differential(), x, &mut jac, |xx, out| {
                (self.dynamics)(t, p, xx, out)
            }),
        }
        jac
    }

    /// `∂g/∂x`, row-major `n_algebraic × state_dim`.
    pub fn algebraic_jacobian(&self, t: f64, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut jac = alloc::vec![0.0; self.n_algebraic() * self.state_dim];
        if self.n_algebraic() == 0 {
            return jac;
        }
        match &self.algebraic_jacobian {
            Some(j) => j(t, p, x, &mut jac),
            None => central_jacobian(self.n_algebraic(), x, &mut jac, |xx, out| {
                self.eval_algebraic(t, p, xx, out)
            }),
        }
        jac
    }

    /// Columns of `∂g/∂x` belonging to the algebraic states, `n_a × n_a`.
    pub fn algebraic_block(&self, t: f64, p: &[f64], x: &[f64]) -> Vec<f64> {
        let full = self.algebraic_jacobian(t, p, x);
        let na = self.n_algebraic();
        let mut block = alloc::vec![0.0; na * na];
        for r in 0..na {
            for (c, &col) in self.algebraic.iter().enumerate() {
                block[r * na + c] = full[r * self.state_dim + col];
            }
        }
        block
    }
}

fn central_jacobian<F: FnMut(&[f64], &mut [f64])>(rows: usize, x: &[f64], jac: &mut [f64], mut f: F) {
    let n = x.len();
    let mut xx = x.to_vec();
    let mut fp = alloc::vec![0.0; rows];
    let mut fm = alloc::vec![0.0; rows];
    for j in 0..n {
        let h = 6e-6 * x[j].abs().max(1.0);
        xx[j] = x[j] + h;
        f(&xx, &mut fp);
        xx[j] = x[j] - h;
        f(&xx, &mut fm);
        xx[j] = x[j];
        for r in 0..rows {
            jac[r * n + j] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
}

/// A cost evaluated at a fixed interior time, `c(p, x(t))`.
#[derive(Clone)]
pub struct PointCost {
    pub t: f64,
    pub cost: TerminalCostFn,
}

/// The objective functional `J(p) = ∫ λ dt + φ(p, x(tf)) + Σ c_ℓ(p, x(t_ℓ))`.
///
/// The point-cost list generalizes the terminal cost to interior measurement
/// times; it is empty for every built-in benchmark.
#[derive(Clone, Default)]
pub struct ObjectiveSpec {
    pub running_cost: Option<RunningCostFn>,
    pub terminal_cost: Option<TerminalCostFn>,
    pub point_costs: Vec<PointCost>,
}

impl fmt::Debug for ObjectiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveSpec")
            .field("running_cost", &self.running_cost.is_some())
            .field("terminal_cost", &self.terminal_cost.is_some())
            .field("point_costs", &self.point_costs.len())
            .finish()
    }
}

impl ObjectiveSpec {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn with_running(mut self, f: RunningCostFn) -> Self {
        self.running_cost = Some(f);
        self
    }

    pub fn with_terminal(mut self, f: TerminalCostFn) -> Self {
        self.terminal_cost = Some(f);
        self
    }

    pub fn with_point(mut self, t: f64, f: TerminalCostFn) -> Self {
        self.point_costs.push(PointCost { t, cost: f });
        self
    }

    pub fn running(&self, t: f64, p: &[f64], x: &[f64]) -> f64 {
        self.running_cost.as_ref().map_or(0.0, |f| f(t, p, x))
    }

    pub fn terminal(&self, p: &[f64], x: &[f64]) -> f64 {
        self.terminal_cost.as_ref().map_or(0.0, |f| f(p, x))
    }

    pub fn has_running_cost(&self) -> bool {
        self.running_cost.is_some()
    }

    /// Interior times at which the objective samples the state.
    pub fn point_times(&self) -> Vec<f64> {
        self.point_costs.iter().map(|c| c.t).collect()
    }
}

/// Normalized sum-of-squares fit to measurements:
/// `J = (1/L) Σ_ℓ Σ_i ((x_i(t_ℓ) − m_ℓi) / m_ℓi)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFitObjective {
    times: Vec<f64>,
    targets: Vec<Vec<f64>>,
    observed: Vec<usize>,
}

impl MeasurementFitObjective {
    /// `targets[ℓ][k]` is the measurement of state `observed[k]` at `times[ℓ]`.
    pub fn new(times: Vec<f64>, targets: Vec<Vec<f64>>, observed: Vec<usize>, t_span: (f64, f64)) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidConfig("measurement fit needs at least one time".into()));
        }
        Error::check_len("measurement rows", times.len(), targets.len())?;
        for (row, &t) in targets.iter().zip(&times) {
            Error::check_len("measurement row", observed.len(), row.len())?;
            if t < t_span.0 || t > t_span.1 {
                return Err(Error::InvalidConfig(alloc::format!(
                    "measurement time {t} outside [{}, {}]",
                    t_span.0,
                    t_span.1
                )));
            }
            if row.iter().any(|&v| v == 0.0 || !v.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "measurement targets at t = {t} must be finite and nonzero"
                )));
            }
        }
        Ok(Self {
            times,
            targets,
            observed,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn to_objective(&self) -> ObjectiveSpec {
        let scale = 1.0 / self.times.len() as f64;
        let mut obj = ObjectiveSpec::zero();
        for (&t, row) in self.times.iter().zip(&self.targets) {
            let row = row.clone();
            let observed = self.observed.clone();
            obj = obj.with_point(
                t,
                Arc::new(move |_p: &[f64], x: &[f64]| {
                    scale
                        * observed
                            .iter()
                            .zip(&row)
                            .map(|(&i, &m)| {
                                let r = (x[i] - m) / m;
                                r * r
                            })
                            .sum::<f64>()
                }),
            );
        }
        obj
    }
}

/// `∫ λ` by Gauss–Legendre over the trajectory's dense output plus `φ` at the
/// final state and any point costs.
pub fn eval_objective_on_trajectory(
    obj: &ObjectiveSpec,
    traj: &Trajectory,
    p: &[f64],
    rule: &GaussLegendre,
    t_span: (f64, f64),
) -> Result<f64> {
    let (t0, tf) = t_span;
    let tol = 1e-12 * (1.0 + tf.abs());
    let (first, last) = (traj.times()[0], traj.final_time());
    if (last - tf).abs() > tol || (first - t0).abs() > tol {
        return Err(Error::TruncatedTrajectory {
            reached: last,
            expected: tf,
        });
    }
    let n = traj.state_dim();
    let mut x = alloc::vec![0.0; n];
    let mut total = 0.0;
    if obj.has_running_cost() {
        let (nodes, weights) = rule.on_interval(t0, tf);
        for (&t, &w) in nodes.iter().zip(&weights) {
            traj.eval_into(t, &mut x);
            total += w * obj.running(t, p, &x);
        }
    }
    for pc in &obj.point_costs {
        traj.eval_into(pc.t, &mut x);
        total += (pc.cost)(p, &x);
    }
    total += obj.terminal(p, traj.final_state());
    Ok(total)
}

/// `(p − 3.1)(p − 3.3)(p − 3.6)(p − 3.8)`, the cantilever's cost weight.
pub fn cantilever_weight(p: f64) -> f64 {
    (p - 3.1) * (p - 3.3) * (p - 3.6) * (p - 3.8)
}

/// Scalar benchmark: `x' = x⁴ − 3x² − x + 0.4`, `x(0) = p − p³/3`,
/// `t ∈ [0, 0.9]`, `p ∈ [−1.2, −0.2]`, `J = −3x(tf)³ + (1 + p)x(tf)`.
pub fn make_scalar_problem() -> (ParametricDaeProblem, ObjectiveSpec) {
    let problem = ParametricDaeProblem::explicit_ode(
        "scalar",
        1,
        (0.0, 0.9),
        alloc::vec![-1.2],
        alloc::vec![-0.2],
        Arc::new(|_t, _p, x, out| {
            let v = x[0];
            out[0] = v * v * v * v - 3.0 * v * v - v + 0.4;
        }),
        Arc::new(|p, out| out[0] = p[0] - p[0] * p[0] * p[0] / 3.0),
    )
    .expect("scalar benchmark is well formed")
    .with_dynamics_jacobian(Arc::new(|_t, _p, x, out| {
        let v = x[0];
        out[0] = 4.0 * v * v * v - 6.0 * v - 1.0;
    }));
    let obj = ObjectiveSpec::zero().with_terminal(Arc::new(|p, x| {
        let v = x[0];
        -3.0 * v * v * v + (1.0 + p[0]) * v
    }));
    (problem, obj)
}

/// Cantilever benchmark reduced to first order on the branch `y1 = −y2`.
///
/// States are `(y1, y1', y2, y2')`. The differential pair follows
/// `y1'' = −y1 − 1/(p+1)`, obtained by differentiating the branch relation
/// `y1 = −(1 − sin x)/(p+1)` twice and eliminating `sin x`. The algebraic pair
/// solves `y1² − y2² = 0` and its derivative `y1 y1' − y2 y2' = 0`; the branch is
/// selected by the consistent initial value `y2(0) = 1/(p+1)`.
pub fn make_cantilever_problem() -> (ParametricDaeProblem, ObjectiveSpec) {
    let problem = ParametricDaeProblem::semi_explicit(
        "cantilever",
        alloc::vec![0, 1],
        alloc::vec![2, 3],
        (0.0, 5.0),
        alloc::vec![3.0],
        alloc::vec![4.0],
        Arc::new(|_t, p, x, out| {
            out[0] = x[1];
            out[1] = -x[0] - 1.0 / (p[0] + 1.0);
        }),
        Arc::new(|_t, _p, x, out| {
            out[0] = x[0] * x[0] - x[2] * x[2];
            out[1] = x[0] * x[1] - x[2] * x[3];
        }),
        Arc::new(|p, out| {
            let c = 1.0 / (p[0] + 1.0);
            out[0] = -c;
            out[1] = c;
            out[2] = c;
            out[3] = -c;
        }),
    )
    .expect("cantilever benchmark is well formed")
    .with_dynamics_jacobian(Arc::new(|_t, _p, _x, out| {
        out.fill(0.0);
        out[1] = 1.0;
        out[4] = -1.0;
    }))
    .with_algebraic_jacobian(Arc::new(|_t, _p, x, out| {
        out.copy_from_slice(&[2.0 * x[0], 0.0, -2.0 * x[2], 0.0, x[1], x[0], -x[3], -x[2]]);
    }));
    let obj = ObjectiveSpec::zero().with_running(Arc::new(|_t, p, x| cantilever_weight(p[0]) * x[2]));
    (problem, obj)
}

/// Linear bidiagonal family `x' = A x + p`, `x(0) = 1`, with `−5n` on the
/// diagonal and `5n` on the subdiagonal, `J = (1/n) Σ (x_i(1) − e^{−5 p_i})²`.
/// Parameters live in `[0, 1]ⁿ`.
pub fn make_bidiagonal_problem(n: usize) -> Result<(ParametricDaeProblem, ObjectiveSpec)> {
    if n == 0 {
        return Err(Error::InvalidProblem("bidiagonal dimension must be at least 1".into()));
    }
    let a = 5.0 * n as f64;
    let problem = ParametricDaeProblem::explicit_ode(
        alloc::format!("bidiag:{n}"),
        n,
        (0.0, 1.0),
        alloc::vec![0.0; n],
        alloc::vec![1.0; n],
        Arc::new(move |_t, p, x, out| {
            for i in 0..x.len() {
                let sub = if i > 0 { a * x[i - 1] } else { 0.0 };
                out[i] = -a * x[i] + sub + p[i];
            }
        }),
        Arc::new(|_p, out| out.fill(1.0)),
    )?
    .with_dynamics_jacobian(Arc::new(move |_t, _p, x, out| {
        let n = x.len();
        out.fill(0.0);
        for i in 0..n {
            out[i * n + i] = -a;
            if i > 0 {
                out[i * n + i - 1] = a;
            }
        }
    }));
    let obj = ObjectiveSpec::zero().with_terminal(Arc::new(|p, x| {
        let n = x.len() as f64;
        x.iter()
            .zip(p)
            .map(|(xi, pi)| {
                let d = xi - libm::exp(-5.0 * pi);
                d * d
            })
            .sum::<f64>()
            / n
    }));
    Ok((problem, obj))
}

/// Benchmark instances addressable by name: `scalar`, `cantilever`, `bidiag:<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    Scalar,
    Cantilever,
    Bidiagonal(usize),
}

impl Benchmark {
    pub fn build(&self) -> Result<(ParametricDaeProblem, ObjectiveSpec)> {
        match *self {
            Benchmark::Scalar => Ok(make_scalar_problem()),
            Benchmark::Cantilever => Ok(make_cantilever_problem()),
            Benchmark::Bidiagonal(n) => make_bidiagonal_problem(n),
        }
    }

    /// Published optimum for the instance, where one is known.
    pub fn reported_optimum(&self) -> Option<Vec<f64>> {
        match *self {
            Benchmark::Scalar => Some(alloc::vec![-0.570610626948189]),
            Benchmark::Cantilever => None,
            Benchmark::Bidiagonal(n) => {
                let v: &[f64] = match n {
                    2 => &[0.5721, 0.4544],
                    3 => &[0.6330, 0.5141, 0.4481],
                    4 => &[0.6771, 0.5572, 0.4904, 0.4444],
                    6 => &[0.7404, 0.6187, 0.5506, 0.5038, 0.4685, 0.4403],
                    8 => &[0.7859, 0.6636, 0.5949, 0.5474, 0.5113, 0.4825, 0.4582, 0.4377],
                    10 => &[
                        0.8241, 0.6984, 0.6287, 0.5811, 0.5445, 0.5150, 0.4904, 0.4694, 0.4515, 0.4350,
                    ],
                    _ => return None,
                };
                Some(v.to_vec())
            }
        }
    }

    /// Published optimal objective value, where one is known.
    pub fn reported_objective(&self) -> Option<f64> {
        match *self {
            Benchmark::Scalar => Some(-0.060686510583486),
            _ => None,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Benchmark::Scalar => f.write_str("scalar"),
            Benchmark::Cantilever => f.write_str("cantilever"),
            Benchmark::Bidiagonal(n) => write!(f, "bidiag:{n}"),
        }
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(Benchmark::Scalar),
            "cantilever" => Ok(Benchmark::Cantilever),
            _ => {
                let n = s
                    .strip_prefix("bidiag:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::InvalidProblem(alloc::format!("unknown problem '{s}'")))?;
                Ok(Benchmark::Bidiagonal(n))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn scalar_instance_matches_definition() {
        let (pr, obj) = make_scalar_problem();
        assert_eq!(pr.t_span(), (0.0, 0.9));
        assert_eq!((pr.lower(), pr.upper()), (&[-1.2][..], &[-0.2][..]));
        assert!((pr.initial_state(&[-0.6])[0] - (-0.528)).abs() < 1e-15);
        let mut out = [0.0];
        pr.eval_dynamics(0.0, &[-0.6], &[0.0], &mut out);
        assert_eq!(out[0], 0.4);
        assert!(obj.running_cost.is_none());
        assert!((obj.terminal(&[-0.5], &[2.0]) - (-24.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn cantilever_initial_values() {
        let (pr, _) = make_cantilever_problem();
        let x = pr.initial_state(&[3.0]);
        assert_eq!(x[0], -0.25);
        assert_eq!(x[2], 0.25);
        assert_eq!(pr.kind(), ProblemKind::SemiExplicitIndex1);
    }

    #[test]
    fn cantilever_analytic_branch_has_zero_residuals() {
        let (pr, _) = make_cantilever_problem();
        let mut r = rng::seeded(11);
        let (mut f, mut g) = ([0.0; 2], [0.0; 2]);
        for _ in 0..1000 {
            let t = r.random::<f64>() * 5.0;
            let p = 3.0 + r.random::<f64>();
            let c = 1.0 / (p + 1.0);
            let y2 = (1.0 - libm::sin(t)) * c;
            let dy2 = -libm::cos(t) * c;
            let x = [-y2, -dy2, y2, dy2];
            pr.eval_dynamics(t, &[p], &x, &mut f);
            pr.eval_algebraic(t, &[p], &x, &mut g);
            // second derivative of y1 = −y2 is sin(t)/(p+1)·(−1)
            let d2y1 = -libm::sin(t) * c;
            assert!((f[0] - x[1]).abs() < 1e-12);
            assert!((f[1] - d2y1).abs() < 1e-12);
            assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
            // original second-order relation: (y1 + y2)'' + (1 − sin)/(p+1) + y1 = 0
            let original = 0.0 + (1.0 - libm::sin(t)) * c + x[0];
            assert!(original.abs() < 1e-12);
        }
    }

    #[test]
    fn initial_states_are_consistent() {
        for name in ["scalar", "cantilever", "bidiag:3"] {
            let (pr, _) = name.parse::<Benchmark>().unwrap().build().unwrap();
            let mut r = rng::seeded(5);
            let mut g = alloc::vec![0.0; pr.n_algebraic()];
            for _ in 0..100 {
                let p = rng::uniform_in_box(&mut r, pr.lower(), pr.upper());
                let x0 = pr.initial_state(&p);
                pr.eval_algebraic(pr.t_span().0, &p, &x0, &mut g);
                assert!(g.iter().all(|v| v.abs() < 1e-10), "{name}");
            }
        }
    }

    #[test]
    fn bidiagonal_matrix_entries() {
        let (pr, obj) = make_bidiagonal_problem(2).unwrap();
        assert_eq!(
            pr.dynamics_jacobian(0.0, &[0.5, 0.5], &[1.0, 1.0]),
            [-10.0, 0.0, 10.0, -10.0]
        );
        assert_eq!(pr.lower(), &[0.0, 0.0]);
        assert_eq!(pr.upper(), &[1.0, 1.0]);
        let e = libm::exp(-2.5);
        assert!((obj.terminal(&[0.5, 0.5], &[e, e])).abs() < 1e-18);
        assert!(make_bidiagonal_problem(0).is_err());
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let (pr, _) = make_cantilever_problem();
        let x = [-0.1, 0.2, 0.1, -0.2];
        let analytic = pr.algebraic_jacobian(1.0, &[3.5], &x);
        let mut fd = alloc::vec![0.0; 8];
        central_jacobian(2, &x, &mut fd, |xx, out| pr.eval_algebraic(1.0, &[3.5], xx, out));
        for (a, b) in analytic.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn benchmark_names_round_trip() {
        for s in ["scalar", "cantilever", "bidiag:7"] {
            assert_eq!(s.parse::<Benchmark>().unwrap().to_string(), s);
        }
        assert!("bidiag:0".parse::<Benchmark>().is_err());
        assert!("pendulum".parse::<Benchmark>().is_err());
    }

    #[test]
    fn invalid_problems_rejected() {
        let f: DynamicsFn = Arc::new(|_, _, _, _| {});
        let x0: InitialFn = Arc::new(|_, _| {});
        assert!(ParametricDaeProblem::explicit_ode(
            "bad",
            1,
            (1.0, 0.0),
            alloc::vec![0.0],
            alloc::vec![1.0],
            f.clone(),
            x0.clone()
        )
        .is_err());
        assert!(ParametricDaeProblem::explicit_ode(
            "bad",
            1,
            (0.0, 1.0),
            alloc::vec![1.0],
            alloc::vec![1.0],
            f.clone(),
            x0.clone()
        )
        .is_err());
        let g: AlgebraicFn = Arc::new(|_, _, _, _| {});
        assert!(ParametricDaeProblem::semi_explicit(
            "bad",
            alloc::vec![0],
            alloc::vec![0],
            (0.0, 1.0),
            alloc::vec![0.0],
            alloc::vec![1.0],
            f,
            g,
            x0
        )
        .is_err());
    }

    #[test]
    fn measurement_fit_rejects_zero_targets() {
        assert!(MeasurementFitObjective::new(
            alloc::vec![0.5],
            alloc::vec![alloc::vec![0.0]],
            alloc::vec![0],
            (0.0, 1.0)
        )
        .is_err());
        assert!(MeasurementFitObjective::new(
            alloc::vec![1.5],
            alloc::vec![alloc::vec![1.0]],
            alloc::vec![0],
            (0.0, 1.0)
        )
        .is_err());
        let fit = MeasurementFitObjective::new(
            alloc::vec![0.5, 1.0],
            alloc::vec![alloc::vec![2.0], alloc::vec![4.0]],
            alloc::vec![0],
            (0.0, 1.0),
        )
        .unwrap();
        let obj = fit.to_objective();
        // (3−2)/2 squared, halved
        assert!(((obj.point_costs[0].cost)(&[0.0], &[3.0]) - 0.125).abs() < 1e-15);
    }
}

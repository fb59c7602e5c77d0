//! High-accuracy solves of the benchmark ODE/DAE instances.
//!
//! Differential states are advanced by the Dormand–Prince 5(4) pair with PI
//! step-size control. For semi-explicit index-1 problems every stage resolves
//! the algebraic states by damped Newton on `g = 0`, warm-started from the last
//! accepted value, which keeps the solution on the branch selected at `t0`.

use alloc::vec::Vec;

use crate::linalg;
use crate::problems::{ParametricDaeProblem, ProblemKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// When set, the solver lands exactly on these times and reports only them.
    pub output_grid: Option<Vec<f64>>,
    pub max_step: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_steps: 200_000,
            newton_tol: 1e-12,
            newton_max_iter: 50,
            output_grid: None,
            max_step: None,
        }
    }
}

impl SolverConfig {
    /// Tight tolerances used for exact data and oracle evaluations.
    pub fn reference() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            ..Self::default()
        }
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Self {
        self.output_grid = Some(grid);
        self
    }

    fn validate(&self, t_span: (f64, f64)) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.newton_tol > 0.0) {
            return Err(Error::InvalidConfig("solver tolerances must be positive".into()));
        }
        if self.max_steps == 0 || self.newton_max_iter == 0 {
            return Err(Error::InvalidConfig(
                "step and iteration caps must be at least 1".into(),
            ));
        }
        if let Some(grid) = &self.output_grid {
            if grid.is_empty() {
                return Err(Error::InvalidConfig("output grid is empty".into()));
            }
            let tol = 1e-12 * (1.0 + t_span.1.abs());
            if grid.windows(2).any(|w| !(w[0] < w[1]))
                || grid[0] < t_span.0 - tol
                || grid[grid.len() - 1] > t_span.1 + tol
            {
                return Err(Error::InvalidConfig(
                    "output grid must be strictly increasing inside the time span".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Uniform grid of `count ≥ 2` points spanning `[a, b]` with exact endpoints.
pub fn uniform_grid(a: f64, b: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    let mut grid: Vec<f64> = (0..count)
        .map(|i| a + (b - a) * i as f64 / (count - 1) as f64)
        .collect();
    grid[count - 1] = b;
    grid
}

/// Time-gridded solution with cubic Hermite dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    derivatives: Vec<f64>,
    max_step: f64,
}

impl Trajectory {
    /// Builds a trajectory from row-major state and derivative samples.
    pub fn from_samples(dim: usize, times: Vec<f64>, states: Vec<f64>, derivatives: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidConfig("trajectory needs at least one time".into()));
        }
        Error::check_len("trajectory states", times.len() * dim, states.len())?;
        Error::check_len("trajectory derivatives", times.len() * dim, derivatives.len())?;
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        let max_step = max_gap(&times);
        Ok(Self {
            dim,
            times,
            states,
            derivatives,
            max_step,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn derivative(&self, i: usize) -> &[f64] {
        &self.derivatives[i * self.dim..(i + 1) * self.dim]
    }

    pub fn final_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.times.len() - 1)
    }

    /// ℏ, the largest gap between adjacent output times.
    pub fn max_step(&self) -> f64 {
        self.max_step
    }

    /// Cubic Hermite interpolation; times outside the grid use the end interval.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if n == 1 {
            out.copy_from_slice(self.state(0));
            return;
        }
        let k = match self.times.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => {
                out.copy_from_slice(self.state(i));
                return;
            }
            Err(i) => i.clamp(1, n - 1) - 1,
        };
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (y0, y1) = (self.state(k), self.state(k + 1));
        let (d0, d1) = (self.derivative(k), self.derivative(k + 1));
        for i in 0..self.dim {
            out[i] = h00 * y0[i] + h10 * h * d0[i] + h01 * y1[i] + h11 * h * d1[i];
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }
}

fn max_gap(times: &[f64]) -> f64 {
    times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const PI_BETA: f64 = 0.04;

/// Stage machinery shared by every step of one solve.
struct Stepper<'a> {
    problem: &'a ParametricDaeProblem,
    p: &'a [f64],
    cfg: &'a SolverConfig,
    diff: &'a [usize],
    alg: &'a [usize],
    /// Full-state scratch for stage evaluations; algebraic slots double as the warm start.
    x: Vec<f64>,
    k: [Vec<f64>; 7],
    evals: usize,
}

impl<'a> Stepper<'a> {
    /// Resolves algebraic states in `self.x` at time `t`, then evaluates `f` into `k[slot]`.
    fn stage(&mut self, t: f64, slot: usize) -> Result<()> {
        if !self.alg.is_empty() {
            newton_algebraic(self.problem, t, self.p, &mut self.x, self.cfg)?;
        }
        self.problem.eval_dynamics(t, self.p, &self.x, &mut self.k[slot]);
        self.evals += 1;
        if let Some(i) = self.k[slot].iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "dynamics",
                index: i,
            });
        }
        Ok(())
    }

    fn load_differential(&mut self, y: &[f64]) {
        for (j, &i) in self.diff.iter().enumerate() {
            self.x[i] = y[j];
        }
    }
}

/// Damped Newton on `g(t, p, x) = 0` for the algebraic components of `x`,
/// warm-started from their current values.
pub fn newton_algebraic(
    problem: &ParametricDaeProblem,
    t: f64,
    p: &[f64],
    x: &mut [f64],
    cfg: &SolverConfig,
) -> Result<usize> {
    let alg = problem.algebraic_indices();
    let na = alg.len();
    if na == 0 {
        return Ok(0);
    }
    let mut g = alloc::vec![0.0; na];
    let mut trial_g = alloc::vec![0.0; na];
    problem.eval_algebraic(t, p, x, &mut g);
    let mut r = norm_inf(&g);
    let step_tol = libm::sqrt(cfg.newton_tol);
    let mut z0 = alloc::vec![0.0; na];
    for iter in 1..=cfg.newton_max_iter {
        let jac = problem.algebraic_block(t, p, x);
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let Some(delta) = linalg::solve(&jac, &rhs) else {
            if r <= cfg.newton_tol {
                return Ok(iter);
            }
            return Err(Error::NewtonFailure { t, residual: r });
        };
        for (j, &i) in alg.iter().enumerate() {
            z0[j] = x[i];
        }
        let mut damping = 1.0;
        loop {
            for (j, &i) in alg.iter().enumerate() {
                x[i] = z0[j] + damping * delta[j];
            }
            problem.eval_algebraic(t, p, x, &mut trial_g);
            let rt = norm_inf(&trial_g);
            if rt <= r || damping < 1e-4 {
                r = rt;
                core::mem::swap(&mut g, &mut trial_g);
                break;
            }
            damping *= 0.5;
        }
        if !r.is_finite() {
            return Err(Error::NewtonFailure { t, residual: r });
        }
        let step = damping * norm_inf(&delta);
        let scale = 1.0 + alg.iter().map(|&i| x[i].abs()).fold(0.0, f64::max);
        if r <= cfg.newton_tol && step <= step_tol * scale {
            return Ok(iter);
        }
    }
    if r <= cfg.newton_tol {
        Ok(cfg.newton_max_iter)
    } else {
        Err(Error::NewtonFailure { t, residual: r })
    }
}

fn sq(v: f64) -> f64 {
    v * v
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves the problem at parameter `p`.
pub fn integrate(problem: &ParametricDaeProblem, p: &[f64], cfg: &SolverConfig) -> Result<Trajectory> {
    problem.check_params(p)?;
    let (t0, tf) = problem.t_span();
    cfg.validate((t0, tf))?;

    let n = problem.state_dim();
    let diff = problem.differential_indices();
    let alg = problem.algebraic_indices();
    let nd = diff.len();

    let mut st = Stepper {
        problem,
        p,
        cfg,
        diff,
        alg,
        x: problem.initial_state(p),
        k: core::array::from_fn(|_| alloc::vec![0.0; nd]),
        evals: 0,
    };
    st.stage(t0, 0)?;

    let mut t = t0;
    let mut y: Vec<f64> = diff.iter().map(|&i| st.x[i]).collect();
    let mut z: Vec<f64> = alg.iter().map(|&i| st.x[i]).collect();

    let mut out = Recorder::new(n);
    let grid = cfg.output_grid.as_deref();
    let mut next_out = 0usize;
    let span_tol = 1e-12 * (1.0 + tf.abs());
    let record_all = grid.is_none();
    if record_all || (grid.unwrap()[0] - t0).abs() <= span_tol {
        out.push(problem, p, t0, &st.x, &st.k[0], cfg);
        if !record_all {
            next_out = 1;
        }
    }

    let h_max = cfg.max_step.unwrap_or(tf - t0).min(tf - t0);
    let mut h = initial_step(&mut st, t0, &y, h_max)?;
    let mut fac_old = 1e-4;
    let mut steps = 0usize;
    let mut reject_streak = 0usize;
    let mut y_new = alloc::vec![0.0; nd];
    let mut err = alloc::vec![0.0; nd];
    let mut ystage = alloc::vec![0.0; nd];

    while t < tf - span_tol {
        if let Some(g) = grid {
            if next_out >= g.len() {
                break;
            }
        }
        steps += 1;
        if steps > cfg.max_steps {
            return Err(Error::MaxStepsExceeded { t });
        }
        let mut target = tf;
        if let Some(g) = grid {
            target = g[next_out].min(tf);
        }
        let mut h_step = h.min(h_max);
        let mut lands = false;
        if t + h_step >= target - span_tol {
            h_step = target - t;
            lands = true;
        }
        if h_step <= 1e-14 * (1.0 + t.abs()) {
            return Err(Error::StepSizeUnderflow { t });
        }

        // stages 2..7, warm starting the algebraic solve from the last accepted z
        for (j, &i) in alg.iter().enumerate() {
            st.x[i] = z[j];
        }
        let mut stage_failed = None;
        for s in 1..7 {
            for d in 0..nd {
                let mut acc = 0.0;
                for (q, kq) in st.k.iter().enumerate().take(s) {
                    acc += A[s][q] * kq[d];
                }
                ystage[d] = y[d] + h_step * acc;
            }
            st.load_differential(&ystage);
            if let Err(e) = st.stage(t + C[s] * h_step, s) {
                stage_failed = Some(e);
                break;
            }
        }
        if let Some(e) = stage_failed {
            // an algebraic failure may just mean the step jumped too far along the branch
            h = 0.25 * h_step;
            reject_streak += 1;
            if reject_streak > 40 || h <= 1e-14 * (1.0 + t.abs()) {
                return Err(e);
            }
            continue;
        }
        y_new.copy_from_slice(&ystage);

        let mut sum = 0.0;
        for d in 0..nd {
            let mut e = 0.0;
            for (q, kq) in st.k.iter().enumerate() {
                e += E[q] * kq[d];
            }
            err[d] = h_step * e;
            let sk = cfg.abs_tol + cfg.rel_tol * y[d].abs().max(y_new[d].abs());
            sum += (err[d] / sk) * (err[d] / sk);
        }
        let err_norm = libm::sqrt(sum / nd as f64);
        if !err_norm.is_finite() {
            h = 0.25 * h_step;
            reject_streak += 1;
            if reject_streak > 40 {
                return Err(Error::StepSizeUnderflow { t });
            }
            continue;
        }

        let expo = 0.2 - PI_BETA * 0.75;
        let fac11 = libm::pow(err_norm, expo);
        if err_norm <= 1.0 {
            let fac = (fac11 / libm::pow(fac_old, PI_BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            fac_old = err_norm.max(1e-4);
            reject_streak = 0;
            t = if lands { target } else { t + h_step };
            y.copy_from_slice(&y_new);
            for (j, &i) in alg.iter().enumerate() {
                z[j] = st.x[i];
            }
            // FSAL: k[6] is f at the accepted point
            let last = core::mem::take(&mut st.k[6]);
            st.k[0] = last;
            st.k[6] = alloc::vec![0.0; nd];
            st.load_differential(&y);
            if record_all || lands {
                out.push(problem, p, t, &st.x, &st.k[0], cfg);
                if lands && !record_all {
                    next_out += 1;
                }
            }
            let proposed = h_step / fac;
            h = if lands { proposed.max(h) } else { proposed };
        } else {
            reject_streak += 1;
            h = h_step / (fac11 / SAFETY).min(1.0 / FAC_MIN);
            if h <= 1e-14 * (1.0 + t.abs()) {
                return Err(Error::StepSizeUnderflow { t });
            }
        }
    }
    out.finish()
}

fn initial_step(st: &mut Stepper<'_>, t0: f64, y0: &[f64], h_max: f64) -> Result<f64> {
    let cfg = st.cfg;
    let nd = y0.len();
    let sk: Vec<f64> = y0.iter().map(|v| cfg.abs_tol + cfg.rel_tol * v.abs()).collect();
    let dnf = libm::sqrt((0..nd).map(|i| sq(st.k[0][i] / sk[i])).sum::<f64>() / nd as f64);
    let dny = libm::sqrt((0..nd).map(|i| sq(y0[i] / sk[i])).sum::<f64>() / nd as f64);
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        0.01 * dny / dnf
    };
    h = h.min(h_max);
    let y1: Vec<f64> = (0..nd).map(|i| y0[i] + h * st.k[0][i]).collect();
    let f0 = st.k[0].clone();
    st.load_differential(&y1);
    st.stage(t0 + h, 1)?;
    let der2 = libm::sqrt((0..nd).map(|i| sq((st.k[1][i] - f0[i]) / sk[i])).sum::<f64>() / nd as f64) / h;
    let der12 = der2.max(dnf);
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        libm::pow(0.01 / der12, 0.2)
    };
    st.load_differential(y0);
    Ok((100.0 * h).min(h1).min(h_max))
}

/// Collects output points and their time derivatives.
struct Recorder {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    derivatives: Vec<f64>,
}

impl Recorder {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            times: Vec::new(),
            states: Vec::new(),
            derivatives: Vec::new(),
        }
    }

    fn push(&mut self, problem: &ParametricDaeProblem, p: &[f64], t: f64, x: &[f64], f: &[f64], cfg: &SolverConfig) {
        let mut dx = alloc::vec![0.0; self.dim];
        for (j, &i) in problem.differential_indices().iter().enumerate() {
            dx[i] = f[j];
        }
        if problem.kind() == ProblemKind::SemiExplicitIndex1 {
            algebraic_derivative(problem, p, t, x, &mut dx, cfg);
        }
        self.times.push(t);
        self.states.extend_from_slice(x);
        self.derivatives.extend_from_slice(&dx);
    }

    fn finish(mut self) -> Result<Trajectory> {
        // derivative gaps left by singular algebraic blocks get divided differences
        let n = self.times.len();
        for i in 0..n {
            for c in 0..self.dim {
                if self.derivatives[i * self.dim + c].is_finite() {
                    continue;
                }
                let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
                let slope = if a == b {
                    0.0
                } else {
                    (self.states[b * self.dim + c] - self.states[a * self.dim + c]) / (self.times[b] - self.times[a])
                };
                self.derivatives[i * self.dim + c] = slope;
            }
        }
        Trajectory::from_samples(self.dim, self.times, self.states, self.derivatives)
    }
}

/// `z' = −g_z⁻¹ (g_t + g_y y')`, written into the algebraic slots of `dx`.
/// Leaves NaN when `g_z` is singular.
fn algebraic_derivative(
    problem: &ParametricDaeProblem,
    p: &[f64],
    t: f64,
    x: &[f64],
    dx: &mut [f64],
    _cfg: &SolverConfig,
) {
    let n = problem.state_dim();
    let alg = problem.algebraic_indices();
    let na = alg.len();
    let full = problem.algebraic_jacobian(t, p, x);
    let ht = 1e-6 * (1.0 + t.abs());
    let mut gp = alloc::vec![0.0; na];
    let mut gm = alloc::vec![0.0; na];
    problem.eval_algebraic(t + ht, p, x, &mut gp);
    problem.eval_algebraic(t - ht, p, x, &mut gm);
    let mut rhs = alloc::vec![0.0; na];
    for r in 0..na {
        let mut v = (gp[r] - gm[r]) / (2.0 * ht);
        for &i in problem.differential_indices() {
            v += full[r * n + i] * dx[i];
        }
        rhs[r] = -v;
    }
    let block = problem.algebraic_block(t, p, x);
    match linalg::solve(&block, &rhs) {
        Some(zdot) if linalg::min_singular_value(&block, na, na) > 1e-10 => {
            for (j, &i) in alg.iter().enumerate() {
                dx[i] = zdot[j];
            }
        }
        _ => {
            for &i in alg {
                dx[i] = f64::NAN;
            }
        }
    }
}

/// Tight-tolerance solve used for exact data and oracle evaluations.
pub fn reference_solve(problem: &ParametricDaeProblem, p: &[f64]) -> Result<Trajectory> {
    integrate(problem, p, &SolverConfig::reference())
}

/// Reference solve reported on a fixed grid.
pub fn reference_solve_on(problem: &ParametricDaeProblem, p: &[f64], grid: Vec<f64>) -> Result<Trajectory> {
    integrate(problem, p, &SolverConfig::reference().with_grid(grid))
}

/// Times along a trajectory where the algebraic Jacobian is near singular.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DegeneracyReport {
    pub flagged_times: Vec<f64>,
    pub min_singular_values: Vec<f64>,
    pub tolerance: f64,
}

impl DegeneracyReport {
    pub fn is_degenerate(&self) -> bool {
        !self.flagged_times.is_empty()
    }

    /// Whether `t` lies within `radius` of any flagged time.
    pub fn near(&self, t: f64, radius: f64) -> bool {
        self.flagged_times.iter().any(|&f| (f - t).abs() <= radius)
    }
}

/// Flags output times where the smallest singular value of `∂g/∂z` drops below `tol`.
pub fn detect_degeneracy(problem: &ParametricDaeProblem, p: &[f64], traj: &Trajectory, tol: f64) -> DegeneracyReport {
    let mut report = DegeneracyReport {
        tolerance: tol,
        ..Default::default()
    };
    let na = problem.n_algebraic();
    if na == 0 {
        return report;
    }
    for (i, &t) in traj.times().iter().enumerate() {
        let block = problem.algebraic_block(t, p, traj.state(i));
        let sigma = linalg::min_singular_value(&block, na, na);
        if sigma < tol {
            report.flagged_times.push(t);
            report.min_singular_values.push(sigma);
        }
    }
    report
}

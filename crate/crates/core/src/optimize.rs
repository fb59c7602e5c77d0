//! Online phase: a tanh-bounded generator `z ↦ p` trained against the frozen
//! constraint network, followed by local refinement on the true dynamics.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::integrate;
use crate::neural::AdamState;
use crate::problems::{eval_objective_on_trajectory, ObjectiveSpec, ParametricDaeProblem};
use crate::quadrature::GaussLegendre;
use crate::rng;
use crate::surrogate::{ConstraintSurrogate, StateModel};
use crate::{Error, Result};

/// `p = ½[tanh(u) ⊙ (U − L) + (U + L)]`.
pub fn map_to_box(u: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&v, (&lo, &hi))| {
            let p = 0.5 * (libm::tanh(v) * (hi - lo) + (hi + lo));
            // rounding at saturation can step one ulp outside
            p.clamp(lo, hi)
        })
        .collect()
}

/// Single-layer generator `p = ½[tanh(W z + b) ⊙ (U − L) + (U + L)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGenerator {
    /// Row-major `m × d`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub seed_dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ObjectiveGenerator {
    /// Uniform `W` entries in `±1/√d`, zero bias.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, seed_dim: usize, seed: u64) -> Result<Self> {
        Error::check_len("generator bounds", lower.len(), upper.len())?;
        if seed_dim == 0 || lower.is_empty() {
            return Err(Error::InvalidConfig(
                "generator needs positive seed and parameter dimensions".into(),
            ));
        }
        let m = lower.len();
        let mut r = rng::substream(seed, 21);
        let a = 1.0 / libm::sqrt(seed_dim as f64);
        let w = (0..m * seed_dim).map(|_| a * rng::symmetric_unit(&mut r)).collect();
        Ok(Self {
            w,
            b: alloc::vec![0.0; m],
            seed_dim,
            lower,
            upper,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.b.len()
    }

    /// Pre-activation `W z + b`.
    pub fn pre_activation(&self, z: &[f64]) -> Vec<f64> {
        let d = self.seed_dim;
        (0..self.param_dim())
            .map(|j| {
                self.b[j]
                    + self.w[j * d..(j + 1) * d]
                        .iter()
                        .zip(z)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn generate(&self, z: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("generator seed", self.seed_dim, z.len())?;
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "generator seed",
                index: i,
            });
        }
        Ok(map_to_box(&self.pre_activation(z), &self.lower, &self.upper))
    }
}

pub fn generate_params(generator: &ObjectiveGenerator, seeds: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    seeds.iter().map(|z| generator.generate(z)).collect()
}

/// `x̂ = NN(t, p) + γ ⊙ ξ`.
pub fn perturbed_state(surr: &ConstraintSurrogate, t: f64, p: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
    Error::check_len("noise vector", surr.gamma.len(), xi.len())?;
    let mut x = surr.predict(t, p)?;
    for ((v, g), e) in x.iter_mut().zip(&surr.gamma).zip(xi) {
        *v += g * e;
    }
    Ok(x)
}

/// `Ĵ(p)` over a frozen state model: Gauss–Legendre quadrature of the
/// running cost plus point and terminal costs, each evaluated at
/// `x̂ + γ ⊙ ξ` with its own `ξ` draw.
pub struct SurrogateObjective<'a, M: StateModel + ?Sized> {
    model: &'a M,
    gamma: &'a [f64],
    objective: &'a ObjectiveSpec,
    t_span: (f64, f64),
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a, M: StateModel + ?Sized> SurrogateObjective<'a, M> {
    pub fn new(
        model: &'a M,
        gamma: &'a [f64],
        objective: &'a ObjectiveSpec,
        t_span: (f64, f64),
        quadrature_nodes: usize,
    ) -> Result<Self> {
        Error::check_len("gamma", model.state_dim(), gamma.len())?;
        let (nodes, weights) = if objective.has_running_cost() {
            GaussLegendre::new(quadrature_nodes)?.on_interval(t_span.0, t_span.1)
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            model,
            gamma,
            objective,
            t_span,
            nodes,
            weights,
        })
    }

    /// Number of `ξ` entries one evaluation consumes.
    pub fn noise_len(&self) -> usize {
        (self.nodes.len() + self.objective.point_costs.len() + 1) * self.model.state_dim()
    }

    /// Evaluates `Ĵ(p)`; `xi = None` means `ξ = 0`.
    pub fn value(&self, p: &[f64], xi: Option<&[f64]>) -> Result<f64> {
        let n = self.model.state_dim();
        if let Some(xi) = xi {
            Error::check_len("noise draw", self.noise_len(), xi.len())?;
        }
        let mut x = alloc::vec![0.0; n];
        let mut slot = 0;
        let mut perturbed = |t: f64, x: &mut [f64]| {
            self.model.state(t, p, x);
            if let Some(xi) = xi {
                for k in 0..n {
                    x[k] += self.gamma[k] * xi[slot * n + k];
                }
            }
            slot += 1;
        };
        let mut total = 0.0;
        for (q, (&t, &w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            perturbed(t, &mut x);
            let v = self.objective.running(t, p, &x);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "running cost at quadrature node",
                    index: q,
                });
            }
            total += w * v;
        }
        for (i, pc) in self.objective.point_costs.iter().enumerate() {
            perturbed(pc.t, &mut x);
            let v = (pc.cost)(p, &x);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "point cost",
                    index: i,
                });
            }
            total += v;
        }
        perturbed(self.t_span.1, &mut x);
        let v = self.objective.terminal(p, &x);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "terminal cost",
                index: 0,
            });
        }
        Ok(total + v)
    }

    /// `(Ĵ, half-width)` where the half-width propagates `γ` to first order:
    /// `Σ_q w_q Σ_k |∂λ/∂x_k| γ_k` plus the same for the point and terminal costs.
    pub fn interval(&self, p: &[f64]) -> Result<(f64, f64)> {
        let center = self.value(p, None)?;
        let n = self.model.state_dim();
        let mut x = alloc::vec![0.0; n];
        let mut spread = 0.0;
        let sensitivity = |x: &mut [f64], f: &dyn Fn(&[f64]) -> f64| -> f64 {
            let mut s = 0.0;
            for k in 0..n {
                if self.gamma[k] == 0.0 {
                    continue;
                }
                let h = 1e-6 * (1.0 + x[k].abs());
                let orig = x[k];
                x[k] = orig + h;
                let fp = f(x);
                x[k] = orig - h;
                let fm = f(x);
                x[k] = orig;
                s += ((fp - fm) / (2.0 * h)).abs() * self.gamma[k];
            }
            s
        };
        for (&t, &w) in self.nodes.iter().zip(&self.weights) {
            self.model.state(t, p, &mut x);
            spread += w.abs() * sensitivity(&mut x, &|xx| self.objective.running(t, p, xx));
        }
        for pc in &self.objective.point_costs {
            self.model.state(pc.t, p, &mut x);
            spread += sensitivity(&mut x, &|xx| (pc.cost)(p, xx));
        }
        self.model.state(self.t_span.1, p, &mut x);
        spread += sensitivity(&mut x, &|xx| self.objective.terminal(p, xx));
        Ok((center, spread))
    }
}

/// One-shot `Ĵ(p)` with an explicit noise draw.
pub fn surrogate_objective(
    p: &[f64],
    surr: &ConstraintSurrogate,
    obj: &ObjectiveSpec,
    t_span: (f64, f64),
    quadrature_nodes: usize,
    xi: Option<&[f64]>,
) -> Result<f64> {
    SurrogateObjective::new(surr, &surr.gamma, obj, t_span, quadrature_nodes)?.value(p, xi)
}

/// Online loss `L = mean_i Ĵ(NN_obj(z_i))` with noise-free `Ĵ`.
pub fn generator_loss<M: StateModel + ?Sized>(
    generator: &ObjectiveGenerator,
    objective: &SurrogateObjective<'_, M>,
    seeds: &[Vec<f64>],
) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("generator loss needs at least one seed".into()));
    }
    let mut total = 0.0;
    for z in seeds {
        total += objective.value(&generator.generate(z)?, None)?;
    }
    Ok(total / seeds.len() as f64)
}

/// `J(p)` from a reference solve of the true dynamics.
pub fn direct_objective(
    problem: &ParametricDaeProblem,
    obj: &ObjectiveSpec,
    p: &[f64],
    rule: &GaussLegendre,
) -> Result<f64> {
    problem.check_params(p)?;
    let traj = integrate::reference_solve(problem, p)?;
    eval_objective_on_trajectory(obj, &traj, p, rule, problem.t_span())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum NoiseSchedule {
    /// Fresh `ξ` every generator iteration.
    PerIteration,
    /// One `ξ` draw reused for the whole run.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OptimizeConfig {
    /// Number of seeds `N`.
    pub seeds: usize,
    /// Seed dimension `d`; `None` means the parameter dimension.
    pub seed_dim: Option<usize>,
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub quadrature_nodes: usize,
    pub noise: NoiseSchedule,
    /// Stop once the noise-free loss changes by less than this fraction of
    /// the decrease achieved so far, twice in a row.
    pub loss_tol: f64,
    pub top_k: usize,
    /// Candidates closer than this fraction of the box diameter are merged.
    pub dedup_fraction: f64,
    /// Finite-difference step for `∂Ĵ/∂p`, as a fraction of the box width.
    pub fd_step: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            seeds: 100,
            seed_dim: None,
            max_iterations: 200,
            learning_rate: 0.02,
            quadrature_nodes: 32,
            noise: NoiseSchedule::PerIteration,
            loss_tol: 1e-3,
            top_k: 5,
            dedup_fraction: 0.02,
            fd_step: 1e-6,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 || self.max_iterations == 0 || self.top_k == 0 || self.seed_dim == Some(0) {
            return Err(Error::InvalidConfig(
                "seed count, seed dimension, iteration cap and top-k must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0)
            || !(self.fd_step > 0.0)
            || !(self.loss_tol >= 0.0)
            || !(self.dedup_fraction >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "optimizer rates and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineMethod {
    None,
    Newton,
    RandomWalk,
}

impl fmt::Display for RefineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RefineMethod::None => "none",
            RefineMethod::Newton => "newton",
            RefineMethod::RandomWalk => "walk",
        })
    }
}

impl FromStr for RefineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RefineMethod::None),
            "newton" => Ok(RefineMethod::Newton),
            "walk" => Ok(RefineMethod::RandomWalk),
            other => Err(Error::InvalidConfig(format!("unknown refinement method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub p_pred: Vec<f64>,
    /// Noise-free surrogate objective at `p_pred`.
    pub j_pred: f64,
    /// First-order `γ` propagation around `j_pred`.
    pub j_pred_spread: f64,
    pub p_refined: Vec<f64>,
    /// Direct objective at `p_refined`.
    pub j_refined: f64,
    pub method: RefineMethod,
    pub generator_iterations: usize,
    pub refine_iterations: usize,
    pub predict_seconds: f64,
    pub refine_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratorRun {
    pub generator: ObjectiveGenerator,
    /// Generator updates performed.
    pub iterations: usize,
    pub converged: bool,
    /// Noise-free mean surrogate objective over the seeds, per iteration.
    pub loss_history: Vec<f64>,
    pub candidates: Vec<CandidateResult>,
}

/// Greedy merge: sort by value, keep points farther than `radius` from every
/// kept point, up to `k`.
fn merge_candidates(pool: &mut Vec<(f64, Vec<f64>)>, radius: f64, k: usize) {
    pool.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut kept: Vec<(f64, Vec<f64>)> = Vec::with_capacity(k);
    for (v, p) in pool.drain(..) {
        if kept.len() == k {
            break;
        }
        let far = kept.iter().all(|(_, q)| {
            let d2: f64 = q.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
            libm::sqrt(d2) > radius
        });
        if far {
            kept.push((v, p));
        }
    }
    *pool = kept;
}

/// Trains the generator by Adam on the mean of `Ĵ` over a fixed seed batch and
/// returns the best distinct parameters seen, ranked by noise-free `Ĵ`, with
/// their direct objective values.
pub fn train_objective_generator(
    surr: &ConstraintSurrogate,
    problem: &ParametricDaeProblem,
    obj: &ObjectiveSpec,
    cfg: &OptimizeConfig,
    seed: u64,
) -> Result<GeneratorRun> {
    cfg.validate()?;
    let m = problem.param_dim();
    Error::check_len("surrogate parameters", m, surr.param_dim())?;
    let (lower, upper) = (problem.lower(), problem.upper());
    let widths = problem.box_widths();
    let d = cfg.seed_dim.unwrap_or(m);
    let mut generator = ObjectiveGenerator::new(lower.to_vec(), upper.to_vec(), d, seed)?;
    let sobj = SurrogateObjective::new(surr, &surr.gamma, obj, problem.t_span(), cfg.quadrature_nodes)?;

    let mut seed_rng = rng::substream(seed, 22);
    let seeds: Vec<Vec<f64>> = (0..cfg.seeds)
        .map(|_| (0..d).map(|_| rng::symmetric_unit(&mut seed_rng)).collect())
        .collect();
    let mut noise_rng = rng::substream(seed, 23);
    let noise_len = sobj.noise_len();
    let draw =
        |r: &mut rng::SeededRng| -> Vec<f64> { (0..cfg.seeds * noise_len).map(|_| rng::symmetric_unit(r)).collect() };
    let mut xi = draw(&mut noise_rng);

    let n_params = m * d + m;
    let mut adam = AdamState::new(n_params, cfg.learning_rate);
    let radius = cfg.dedup_fraction * libm::sqrt(widths.iter().map(|w| w * w).sum::<f64>());
    let mut pool: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut loss_history = Vec::new();
    let mut calm = 0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..cfg.max_iterations {
        if it > 0 && cfg.noise == NoiseSchedule::PerIteration {
            xi = draw(&mut noise_rng);
        }
        let mut grad = alloc::vec![0.0; n_params];
        let mut clean_loss = 0.0;
        for (i, z) in seeds.iter().enumerate() {
            let u = generator.pre_activation(z);
            let p = map_to_box(&u, lower, upper);
            let xi_i = &xi[i * noise_len..(i + 1) * noise_len];
            let clean = sobj.value(&p, None)?;
            clean_loss += clean;
            pool.push((clean, p.clone()));
            for j in 0..m {
                let h = cfg.fd_step * widths[j];
                let mut pp = p.clone();
                pp[j] = (p[j] + h).min(upper[j]);
                let mut pm = p.clone();
                pm[j] = (p[j] - h).max(lower[j]);
                let span = pp[j] - pm[j];
                let dj = if span > 0.0 {
                    (sobj.value(&pp, Some(xi_i))? - sobj.value(&pm, Some(xi_i))?) / span
                } else {
                    0.0
                };
                let th = libm::tanh(u[j]);
                let du = dj * 0.5 * (1.0 - th * th) * widths[j] / cfg.seeds as f64;
                for k in 0..d {
                    grad[j * d + k] += du * z[k];
                }
                grad[m * d + j] += du;
            }
        }
        clean_loss /= cfg.seeds as f64;
        merge_candidates(&mut pool, radius, cfg.top_k);

        let mut flat: Vec<f64> = generator.w.iter().chain(&generator.b).copied().collect();
        adam.step(&mut flat, &grad)?;
        generator.w.copy_from_slice(&flat[..m * d]);
        generator.b.copy_from_slice(&flat[m * d..]);
        iterations = it + 1;

        if let Some(&prev) = loss_history.last() {
            let first: f64 = loss_history[0];
            let best = loss_history.iter().copied().fold(clean_loss, f64::min);
            let scale = clean_loss.abs().max(first - best).max(1e-300);
            let change: f64 = clean_loss - prev;
            calm = if change.abs() <= cfg.loss_tol * scale {
                calm + 1
            } else {
                0
            };
        }
        loss_history.push(clean_loss);
        if calm >= 2 {
            converged = true;
            break;
        }
    }

    // the final generator state also counts
    for z in &seeds {
        let p = generator.generate(z)?;
        pool.push((sobj.value(&p, None)?, p));
    }
    merge_candidates(&mut pool, radius, cfg.top_k);

    let rule = GaussLegendre::new(cfg.quadrature_nodes)?;
    let mut candidates = Vec::with_capacity(pool.len());
    for (j_pred, p) in pool {
        let (_, spread) = sobj.interval(&p)?;
        let j_direct = direct_objective(problem, obj, &p, &rule)?;
        candidates.push(CandidateResult {
            p_refined: p.clone(),
            p_pred: p,
            j_pred,
            j_pred_spread: spread,
            j_refined: j_direct,
            method: RefineMethod::None,
            generator_iterations: iterations,
            refine_iterations: 0,
            predict_seconds: 0.0,
            refine_seconds: 0.0,
        });
    }
    Ok(GeneratorRun {
        generator,
        iterations,
        converged,
        loss_history,
        candidates,
    })
}

/// Result of a local refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub p: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Set when the evaluator failed and the best point so far was returned.
    pub failure: Option<String>,
}

struct Counted<F> {
    f: F,
    calls: usize,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Counted<F> {
    fn eval(&mut self, p: &[f64]) -> Result<f64> {
        self.calls += 1;
        let v = (self.f)(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite {
                what: "objective",
                index: self.calls,
            })
        }
    }
}

/// Central-difference gradient and Hessian at `c`, using the values at `c`.
fn fd_derivatives<F: FnMut(&[f64]) -> Result<f64>>(
    f: &mut Counted<F>,
    c: &[f64],
    fc: f64,
    h: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = c.len();
    let mut g = alloc::vec![0.0; m];
    let mut hess = alloc::vec![0.0; m * m];
    let mut x = c.to_vec();
    for i in 0..m {
        x[i] = c[i] + h[i];
        let fp = f.eval(&x)?;
        x[i] = c[i] - h[i];
        let fm = f.eval(&x)?;
        x[i] = c[i];
        g[i] = (fp - fm) / (2.0 * h[i]);
        hess[i * m + i] = (fp - 2.0 * fc + fm) / (h[i] * h[i]);
    }
    for i in 0..m {
        for j in i + 1..m {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                x[i] = c[i] + si * h[i];
                x[j] = c[j] + sj * h[j];
                let v = f.eval(&x);
                x[i] = c[i];
                x[j] = c[j];
                v
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)? + corner(-1.0, -1.0)?)
                / (4.0 * h[i] * h[j]);
            hess[i * m + j] = v;
            hess[j * m + i] = v;
        }
    }
    Ok((g, hess))
}

/// Newton step `H⁻¹ g`; `None` when `H` is not positive definite even after
/// adding `μI`, `μ = 1e-8 ‖H‖∞`.
fn newton_direction(hess: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let m = g.len();
    if m == 1 {
        return (hess[0] > 0.0).then(|| alloc::vec![g[0] / hess[0]]);
    }
    if let Some(s) = crate::linalg::solve_spd(hess, g) {
        return Some(s);
    }
    let mu = 1e-8 * crate::linalg::norm_inf(hess, m, m);
    let mut reg = hess.to_vec();
    for i in 0..m {
        reg[i * m + i] += mu;
    }
    crate::linalg::solve_spd(&reg, g)
}

/// Box-clamped Newton iteration with finite-difference derivatives (step
/// `fd_step` times the box width). Falls back to a damped gradient step
/// when the Hessian is not positive definite; returns the best point visited.
pub fn newton_refine<F>(
    p0: &[f64],
    lower: &[f64],
    upper: &[f64],
    evaluator: F,
    steps: usize,
    fd_step: f64,
) -> RefineOutcome
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut f = Counted { f: evaluator, calls: 0 };
    let m = p0.len();
    let h: Vec<f64> = (0..m).map(|i| fd_step * (upper[i] - lower[i])).collect();
    let mut p: Vec<f64> = (0..m).map(|i| p0[i].clamp(lower[i], upper[i])).collect();
    let mut fp = match f.eval(&p) {
        Ok(v) => v,
        Err(e) => {
            return RefineOutcome {
                p,
                value: f64::NAN,
                iterations: 0,
                evaluations: f.calls,
                failure: Some(format!("{e}")),
            }
        }
    };
    let mut iterations = 0;
    let mut failure = None;
    for _ in 0..steps {
        // keep the stencil inside the box
        let c: Vec<f64> = (0..m).map(|i| p[i].clamp(lower[i] + h[i], upper[i] - h[i])).collect();
        let step = (|| -> Result<Option<(Vec<f64>, f64)>> {
            let fc = if c == p { fp } else { f.eval(&c)? };
            let (g, hess) = fd_derivatives(&mut f, &c, fc, &h)?;
            let dir = match newton_direction(&hess, &g) {
                Some(d) => d,
                None => {
                    // damped gradient: at most a tenth of the box per step
                    let gn = libm::sqrt(g.iter().map(|v| v * v).sum::<f64>());
                    if gn == 0.0 {
                        return Ok(None);
                    }
                    let len = 0.1 * libm::sqrt(h.iter().map(|v| v * v).sum::<f64>()) / fd_step;
                    g.iter().map(|v| v * len / gn).collect()
                }
            };
            let mut scale = 1.0;
            for _ in 0..30 {
                let cand: Vec<f64> = (0..m)
                    .map(|i| (p[i] - scale * dir[i]).clamp(lower[i], upper[i]))
                    .collect();
                if cand == p {
                    return Ok(None);
                }
                let fc = f.eval(&cand)?;
                if fc <= fp {
                    return Ok(Some((cand, fc)));
                }
                scale *= 0.5;
            }
            Ok(None)
        })();
        match step {
            Ok(Some((cand, v))) => {
                p = cand;
                fp = v;
                iterations += 1;
            }
            Ok(None) => break,
            Err(e) => {
                failure = Some(format!("{e}"));
                break;
            }
        }
    }
    RefineOutcome {
        p,
        value: fp,
        iterations,
        evaluations: f.calls,
        failure,
    }
}

/// Accept-if-better random search: proposals `p + u`, `u` uniform in
/// `±step_frac · width`, clamped to the box.
pub fn random_walk_refine<F>(
    p0: &[f64],
    lower: &[f64],
    upper: &[f64],
    evaluator: F,
    iters: usize,
    step_frac: f64,
    seed: u64,
) -> RefineOutcome
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut f = Counted { f: evaluator, calls: 0 };
    let mut r = rng::substream(seed, 31);
    let m = p0.len();
    let mut p: Vec<f64> = (0..m).map(|i| p0[i].clamp(lower[i], upper[i])).collect();
    let mut best = match f.eval(&p) {
        Ok(v) => v,
        Err(e) => {
            return RefineOutcome {
                p,
                value: f64::NAN,
                iterations: 0,
                evaluations: f.calls,
                failure: Some(format!("{e}")),
            }
        }
    };
    let mut failure = None;
    for _ in 0..iters {
        let cand: Vec<f64> = (0..m)
            .map(|i| {
                let w = upper[i] - lower[i];
                (p[i] + step_frac * w * (2.0 * r.random::<f64>() - 1.0)).clamp(lower[i], upper[i])
            })
            .collect();
        match f.eval(&cand) {
            Ok(v) if v < best => {
                best = v;
                p = cand;
            }
            Ok(_) => {}
            Err(e) => {
                failure = Some(format!("{e}"));
                break;
            }
        }
    }
    RefineOutcome {
        p,
        value: best,
        iterations: iters,
        evaluations: f.calls,
        failure,
    }
}

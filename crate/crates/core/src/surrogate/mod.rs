//! Offline constraint network: three-part physics-informed loss and the
//! genetic adaptive sampler that decides where new exact solutions go.

mod dataset;
mod ga;
mod gamma;
mod loss;

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::integrate;
use crate::neural::{AdamState, Affine, Dual, Mlp};
use crate::problems::ParametricDaeProblem;
use crate::rng::{self, SeededRng};
use crate::{Error, Result};

pub use dataset::{build_initial_dataset, Record, RecordSet, ReferenceEntry, TrainingDataset};
pub use ga::{generate_offspring, monitor_grid, select_parents, Selection};
pub use gamma::{estimate_gamma, half_width, residual_samples, validation_params, GammaEstimate, MIN_RESIDUAL_SAMPLES};
pub use loss::{composite_loss, LossParts, LossScales, LossWeights};

use dataset::{assemble, initial_entries, push_entry_records, solve_entry, solve_with_resampling};
use loss::{batch_gradient, Batch};

/// Anything that maps `(t, p)` to a state estimate.
pub trait StateModel {
    fn state_dim(&self) -> usize;

    fn state(&self, t: f64, p: &[f64], out: &mut [f64]);

    /// State and its time derivative.
    fn state_and_rate(&self, t: f64, p: &[f64], x: &mut [f64], xdot: &mut [f64]);
}

impl StateModel for Mlp {
    fn state_dim(&self) -> usize {
        self.output_dim()
    }

    fn state(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let mut input = Vec::with_capacity(1 + p.len());
        input.push(t);
        input.extend_from_slice(p);
        self.forward_generic(&input, out);
    }

    fn state_and_rate(&self, t: f64, p: &[f64], x: &mut [f64], xdot: &mut [f64]) {
        let mut input = Vec::with_capacity(1 + p.len());
        input.push(Dual::variable(t));
        input.extend(p.iter().map(|&v| Dual::constant(v)));
        let mut out = alloc::vec![Dual::default(); self.output_dim()];
        self.forward_generic(&input, &mut out);
        for (k, d) in out.iter().enumerate() {
            x[k] = d.re;
            xdot[k] = d.eps;
        }
    }
}

/// Per-generation training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub loss: f64,
    pub max_error: f64,
    /// Smallest max error seen up to and including this generation.
    pub best_max_error: f64,
    pub exact_points: usize,
    pub population: usize,
}

/// Trained network `(t, p) ↦ x̂` with its relaxation vector `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSurrogate {
    pub net: Mlp,
    pub gamma: Vec<f64>,
    pub history: Vec<GenerationStats>,
    pub converged: bool,
}

impl ConstraintSurrogate {
    pub fn new(net: Mlp, param_dim: usize) -> Result<Self> {
        Error::check_len("surrogate input", 1 + param_dim, net.input_dim())?;
        let n = net.output_dim();
        Ok(Self {
            net,
            gamma: alloc::vec![0.0; n],
            history: Vec::new(),
            converged: false,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.net.input_dim() - 1
    }

    pub fn set_gamma(&mut self, gamma: Vec<f64>) -> Result<()> {
        Error::check_len("gamma", self.net.output_dim(), gamma.len())?;
        if gamma.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidConfig("gamma must be finite and non-negative".into()));
        }
        self.gamma = gamma;
        Ok(())
    }

    pub fn predict(&self, t: f64, p: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("surrogate parameters", self.param_dim(), p.len())?;
        let mut out = alloc::vec![0.0; self.net.output_dim()];
        self.net.state(t, p, &mut out);
        Ok(out)
    }

    /// Smallest monitored max error over the recorded generations.
    pub fn best_max_error(&self) -> Option<f64> {
        self.history.last().map(|h| h.best_max_error)
    }
}

impl StateModel for ConstraintSurrogate {
    fn state_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn state(&self, t: f64, p: &[f64], out: &mut [f64]) {
        self.net.state(t, p, out)
    }

    fn state_and_rate(&self, t: f64, p: &[f64], x: &mut [f64], xdot: &mut [f64]) {
        self.net.state_and_rate(t, p, x, xdot)
    }
}

/// Settings for the offline training loop.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GaConfig {
    /// Stop once every monitored prediction error is at most `alpha`.
    pub alpha: f64,
    /// Initial Latin-hypercube population `M`.
    pub population: usize,
    /// Exact points added per generation; offspring count is this divided
    /// by `samples_per_trajectory`, rounded up.
    pub points_per_generation: usize,
    pub samples_per_trajectory: usize,
    pub collocation_points: usize,
    /// Mutation standard deviation as a fraction of the box width.
    pub sigma: f64,
    pub max_generations: usize,
    /// Fixed parameter grid monitored alongside the population.
    pub monitor_points: usize,
    /// Uniform time points for the prediction error.
    pub monitor_times: usize,
    /// Output grid of the reference solves.
    pub reference_grid: usize,
    /// Adam steps per generation, each on a fresh minibatch.
    pub epochs_per_generation: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub hidden_layers: Vec<usize>,
    pub degeneracy_tol: f64,
    /// Exact records closer than this fraction of the time span to a
    /// flagged degeneracy are withheld.
    pub exclusion_fraction: f64,
    /// Tolerances for the solves that produce exact records.
    pub solver: integrate::SolverConfig,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            population: 50,
            points_per_generation: 1000,
            samples_per_trajectory: 20,
            collocation_points: 2000,
            sigma: 0.05,
            max_generations: 30,
            monitor_points: 100,
            monitor_times: 41,
            reference_grid: 501,
            epochs_per_generation: 2000,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            decay_every: 5,
            batch_size: 128,
            weights: LossWeights::default(),
            hidden_layers: alloc::vec![128; 6],
            degeneracy_tol: 1e-5,
            exclusion_fraction: 0.02,
            solver: integrate::SolverConfig::reference(),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if !(self.sigma >= 0.0) {
            return bad("sigma must be non-negative");
        }
        if self.samples_per_trajectory < 1 || self.monitor_times < 2 || self.reference_grid < 2 {
            return bad("sample, monitor and reference grids need at least 2 points (samples at least 1)");
        }
        if self.batch_size == 0 || self.hidden_layers.contains(&0) {
            return bad("batch size and hidden widths must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) || self.decay_every == 0 {
            return bad("learning rate schedule must be positive");
        }
        let w = self.weights;
        if !(w.initial >= 0.0 && w.collocation >= 0.0 && w.exact >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.degeneracy_tol >= 0.0) || !(self.exclusion_fraction >= 0.0) {
            return bad("degeneracy settings must be non-negative");
        }
        Ok(())
    }

    pub fn offspring_per_generation(&self) -> usize {
        self.points_per_generation.div_ceil(self.samples_per_trajectory)
    }
}

/// Sup-norm error of a model against a reference solution on a uniform grid
/// of `times` points.
pub fn prediction_error<M: StateModel + ?Sized>(
    model: &M,
    problem: &ParametricDaeProblem,
    p: &[f64],
    times: usize,
) -> Result<f64> {
    problem.check_params(p)?;
    let (t0, tf) = problem.t_span();
    let grid = integrate::uniform_grid(t0, tf, times);
    let traj = integrate::reference_solve_on(problem, p, grid).map_err(|e| Error::ReferenceSolve {
        p: p.to_vec(),
        source: alloc::boxed::Box::new(e),
    })?;
    let mut y = alloc::vec![0.0; problem.state_dim()];
    let mut err = 0.0f64;
    for (i, &t) in traj.times().iter().enumerate() {
        model.state(t, p, &mut y);
        for (a, b) in y.iter().zip(traj.state(i)) {
            err = err.max((a - b).abs());
        }
    }
    Ok(err)
}

fn entry_error<M: StateModel + ?Sized>(model: &M, entry: &ReferenceEntry, grid: &[f64], y: &mut [f64]) -> f64 {
    let mut x = alloc::vec![0.0; y.len()];
    let mut err = 0.0f64;
    for &t in grid {
        model.state(t, &entry.p, y);
        entry.trajectory.eval_into(t, &mut x);
        for (a, b) in y.iter().zip(&x) {
            err = err.max((a - b).abs());
        }
    }
    err
}

/// Everything produced by [`ga_training_loop`].
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub surrogate: ConstraintSurrogate,
    pub dataset: TrainingDataset,
    pub scales: LossScales,
    /// Reference solves that failed and were redrawn.
    pub failed_solves: usize,
}

fn output_normalization(dataset: &TrainingDataset, n: usize) -> Affine {
    let mut lo = alloc::vec![f64::INFINITY; n];
    let mut hi = alloc::vec![f64::NEG_INFINITY; n];
    for r in dataset.initial.iter().chain(&dataset.exact) {
        for k in 0..n {
            lo[k] = lo[k].min(r.x[k]);
            hi[k] = hi[k].max(r.x[k]);
        }
    }
    let mut norm = Affine::from_range(&lo, &hi);
    for s in norm.scale.iter_mut() {
        *s = s.max(1e-6);
    }
    norm
}

struct Trainer<'a> {
    problem: &'a ParametricDaeProblem,
    cfg: &'a GaConfig,
    scales: &'a LossScales,
    batch: Batch,
    rng: SeededRng,
}

impl Trainer<'_> {
    fn run(&mut self, net: &mut Mlp, adam: &mut AdamState, dataset: &TrainingDataset, steps: usize) -> Result<f64> {
        let n = self.problem.state_dim() as f64;
        let w = self.cfg.weights;
        let b = self.cfg.batch_size;
        let mut last = 0.0;
        for _ in 0..steps {
            self.batch.clear();
            let ni = dataset.initial.len().min(b);
            for _ in 0..ni {
                let r = &dataset.initial[self.rng.random_range(0..dataset.initial.len())];
                self.batch.push_data(r, w.initial / (ni as f64 * n));
            }
            let ne = dataset.exact.len().min(b);
            for _ in 0..ne {
                let r = &dataset.exact[self.rng.random_range(0..dataset.exact.len())];
                self.batch.push_data(r, w.exact / (ne as f64 * n));
            }
            let nc = if w.collocation > 0.0 {
                dataset.collocation.len().min(b)
            } else {
                0
            };
            for _ in 0..nc {
                let r = &dataset.collocation[self.rng.random_range(0..dataset.collocation.len())];
                self.batch.push_colloc(r);
            }
            self.batch.colloc_weight = w.collocation / (nc.max(1) as f64 * n);
            let (loss, grad) = batch_gradient(net, self.problem, &self.batch, self.scales)?;
            adam.step(net.params_mut(), &grad)?;
            last = loss;
        }
        Ok(last)
    }
}

/// Alternates training, error monitoring and offspring sampling until every
/// monitored error is within `alpha` or the generation cap is reached. The
/// returned network is the checkpoint with the smallest monitored max error.
pub fn ga_training_loop(problem: &ParametricDaeProblem, cfg: &GaConfig, seed: u64) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let (t0, tf) = problem.t_span();
    let (m, n) = (problem.param_dim(), problem.state_dim());
    let mut failed_solves = 0;
    let mut entries = initial_entries(problem, cfg.population, cfg, seed, &mut failed_solves)?;
    let mut dataset = assemble(problem, &entries, cfg.collocation_points, cfg, seed)?;
    let mut monitor = Vec::new();
    for p in monitor_grid(problem.lower(), problem.upper(), cfg.monitor_points) {
        match solve_entry(problem, &p, cfg) {
            Ok(e) => monitor.push(e),
            Err(e) => {
                log::warn!("monitor point dropped: {e}");
                failed_solves += 1;
            }
        }
    }

    let mut sizes = alloc::vec![1 + m];
    sizes.extend_from_slice(&cfg.hidden_layers);
    sizes.push(n);
    let mut net = Mlp::init(&sizes, rng::substream(seed, 4).next_u64())?;
    let mut lo = alloc::vec![t0];
    lo.extend_from_slice(problem.lower());
    let mut hi = alloc::vec![tf];
    hi.extend_from_slice(problem.upper());
    net.set_input_norm(Affine::from_range(&lo, &hi))?;
    let out_norm = output_normalization(&dataset, n);
    let scales = LossScales::from_normalization(problem, out_norm.scale.clone(), &dataset.exact);
    net.set_output_norm(out_norm)?;

    let mut adam = AdamState::new(net.params().len(), cfg.learning_rate);
    let mut trainer = Trainer {
        problem,
        cfg,
        scales: &scales,
        batch: Batch::default(),
        rng: rng::substream(seed, 5),
    };
    let mut ga_rng = rng::substream(seed, 6);
    let eval_grid = integrate::uniform_grid(t0, tf, cfg.monitor_times);
    let mut y = alloc::vec![0.0; n];
    let mut best: Option<(f64, Mlp)> = None;
    let mut history = Vec::new();
    let mut converged = false;

    for generation in 0..=cfg.max_generations {
        adam.learning_rate = cfg.learning_rate * libm::pow(cfg.lr_decay, (generation / cfg.decay_every) as f64);
        trainer.run(&mut net, &mut adam, &dataset, cfg.epochs_per_generation)?;

        let errors: Vec<f64> = entries
            .iter()
            .chain(&monitor)
            .map(|e| entry_error(&net, e, &eval_grid, &mut y))
            .collect();
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        if !max_error.is_finite() {
            return Err(Error::NonFinite {
                what: "prediction error",
                index: generation,
            });
        }
        let loss = composite_loss(&net, problem, &dataset, &cfg.weights, &scales)?.total;
        if best.as_ref().is_none_or(|(e, _)| max_error < *e) {
            best = Some((max_error, net.clone()));
        }
        let best_max_error = best.as_ref().map_or(max_error, |b| b.0);
        history.push(GenerationStats {
            generation,
            loss,
            max_error,
            best_max_error,
            exact_points: dataset.exact.len(),
            population: entries.len(),
        });
        log::info!(
            "generation {generation}: loss {loss:.3e}, max error {max_error:.3e}, {} exact points",
            dataset.exact.len()
        );
        if max_error <= cfg.alpha {
            converged = true;
            break;
        }
        if generation == cfg.max_generations {
            break;
        }
        let Selection::Pairs(pairs) = select_parents(&errors, cfg.alpha, cfg.offspring_per_generation(), &mut ga_rng)
        else {
            unreachable!("max error above alpha leaves a non-empty parent pool");
        };
        let population_p = |i: usize| -> Vec<f64> {
            if i < entries.len() {
                entries[i].p.clone()
            } else {
                monitor[i - entries.len()].p.clone()
            }
        };
        let parents: Vec<(Vec<f64>, Vec<f64>)> =
            pairs.iter().map(|&(a, b)| (population_p(a), population_p(b))).collect();
        for (p1, p2) in parents {
            let child = generate_offspring(&p1, &p2, problem.lower(), problem.upper(), cfg.sigma, None, &mut ga_rng);
            let entry = solve_with_resampling(problem, child, cfg, &mut ga_rng, &mut failed_solves)?;
            push_entry_records(&mut dataset, problem, &entry, cfg, generation + 1)?;
            entries.push(entry);
        }
    }

    let (_, best_net) = best.expect("at least one generation runs");
    let mut surrogate = ConstraintSurrogate::new(best_net, m)?;
    surrogate.history = history;
    surrogate.converged = converged;
    Ok(TrainingOutcome {
        surrogate,
        dataset,
        scales,
        failed_solves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_cantilever_problem, make_scalar_problem};

    /// Analytic cantilever branch standing in for a trained network.
    struct CantileverBranch;

    impl StateModel for CantileverBranch {
        fn state_dim(&self) -> usize {
            4
        }

        fn state(&self, t: f64, p: &[f64], out: &mut [f64]) {
            let c = 1.0 / (p[0] + 1.0);
            let (s, co) = (libm::sin(t), libm::cos(t));
            out.copy_from_slice(&[-(1.0 - s) * c, co * c, (1.0 - s) * c, -co * c]);
        }

        fn state_and_rate(&self, t: f64, p: &[f64], x: &mut [f64], xdot: &mut [f64]) {
            self.state(t, p, x);
            let c = 1.0 / (p[0] + 1.0);
            let (s, co) = (libm::sin(t), libm::cos(t));
            xdot.copy_from_slice(&[co * c, -s * c, -co * c, s * c]);
        }
    }

    fn tiny_cfg() -> GaConfig {
        GaConfig {
            population: 4,
            samples_per_trajectory: 10,
            collocation_points: 50,
            reference_grid: 101,
            monitor_points: 5,
            monitor_times: 11,
            epochs_per_generation: 20,
            points_per_generation: 20,
            max_generations: 2,
            hidden_layers: alloc::vec![8],
            batch_size: 16,
            ..GaConfig::default()
        }
    }

    #[test]
    fn analytic_branch_has_vanishing_loss() {
        let (pr, _) = make_cantilever_problem();
        let cfg = GaConfig {
            samples_per_trajectory: 30,
            reference_grid: 501,
            ..GaConfig::default()
        };
        let ds = build_initial_dataset(&pr, 5, 200, &cfg, 3).unwrap();
        let scales = LossScales::unit(&pr);
        let parts = composite_loss(&CantileverBranch, &pr, &ds, &LossWeights::default(), &scales).unwrap();
        assert!(
            parts.initial < 1e-10 && parts.collocation < 1e-10 && parts.exact < 1e-10,
            "{parts:?}"
        );
        let e = prediction_error(&CantileverBranch, &pr, &[3.4], 200).unwrap();
        assert!(e < 1e-10);
    }

    #[test]
    fn loss_is_linear_in_weights() {
        let (pr, _) = make_scalar_problem();
        let ds = build_initial_dataset(&pr, 3, 20, &tiny_cfg(), 1).unwrap();
        let net = Mlp::init(&[2, 5, 1], 7).unwrap();
        let scales = LossScales::unit(&pr);
        let w = LossWeights::default();
        let a = composite_loss(&net, &pr, &ds, &w, &scales).unwrap();
        let b = composite_loss(&net, &pr, &ds, &LossWeights { exact: 2.0, ..w }, &scales).unwrap();
        assert!((b.total - a.total - a.exact).abs() <= 1e-14 * b.total);
        let mut no_colloc = ds.clone();
        no_colloc.collocation.clear();
        let c = composite_loss(&net, &pr, &no_colloc, &LossWeights { collocation: 5.0, ..w }, &scales).unwrap();
        assert_eq!(c.total, c.initial + c.exact);
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let (pr, _) = make_cantilever_problem();
        let ds = build_initial_dataset(&pr, 3, 6, &tiny_cfg(), 2).unwrap();
        let mut net = Mlp::init(&[2, 4, 4], 3).unwrap();
        net.set_input_norm(Affine::from_range(&[0.0, 3.0], &[5.0, 4.0]))
            .unwrap();
        let scales = LossScales::from_normalization(&pr, alloc::vec![0.3, 0.2, 0.25, 0.15], &ds.exact);
        let mut batch = Batch::default();
        for r in ds.exact.iter().take(5) {
            batch.push_data(r, 0.3);
        }
        for r in &ds.collocation {
            batch.push_colloc(r);
        }
        batch.colloc_weight = 0.7;
        let (_, grad) = batch_gradient(&net, &pr, &batch, &scales).unwrap();
        let h = 1e-6;
        for w in 0..net.params().len() {
            let orig = net.params()[w];
            net.params_mut()[w] = orig + h;
            let lp = batch_gradient(&net, &pr, &batch, &scales).unwrap().0;
            net.params_mut()[w] = orig - h;
            let lm = batch_gradient(&net, &pr, &batch, &scales).unwrap().0;
            net.params_mut()[w] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(
                (grad[w] - fd).abs() <= 1e-5 * fd.abs().max(1e-3),
                "{w}: {} vs {fd}",
                grad[w]
            );
        }
    }

    #[test]
    fn untrained_network_has_positive_error() {
        let (pr, _) = make_scalar_problem();
        let net = Mlp::init(&[2, 4, 1], 1).unwrap();
        assert!(prediction_error(&net, &pr, &[-0.7], 20).unwrap() > 0.0);
        assert!(prediction_error(&net, &pr, &[0.7], 20).is_err());
    }

    #[test]
    fn vacuous_tolerance_stops_at_generation_zero() {
        let (pr, _) = make_scalar_problem();
        let cfg = GaConfig {
            alpha: 1e6,
            ..tiny_cfg()
        };
        let out = ga_training_loop(&pr, &cfg, 0).unwrap();
        assert!(out.surrogate.converged);
        assert_eq!(out.surrogate.history.len(), 1);
        assert!(out.dataset.exact.iter().all(|r| r.generation == 0));
        assert_eq!(out.dataset.initial.len(), 4);
    }

    #[test]
    fn loop_is_reproducible_and_keeps_best() {
        let (pr, _) = make_scalar_problem();
        let cfg = GaConfig {
            alpha: 1e-9,
            ..tiny_cfg()
        };
        let a = ga_training_loop(&pr, &cfg, 5).unwrap();
        let b = ga_training_loop(&pr, &cfg, 5).unwrap();
        assert_eq!(a.surrogate, b.surrogate);
        assert!(!a.surrogate.converged);
        let h = &a.surrogate.history;
        assert_eq!(h.len(), 3);
        assert!(h.windows(2).all(|w| w[1].best_max_error <= w[0].best_max_error));
        let min = h.iter().map(|g| g.max_error).fold(f64::INFINITY, f64::min);
        assert_eq!(a.surrogate.best_max_error(), Some(min));
        assert_eq!(h[2].exact_points, 4 * 10 + 2 * 2 * 10);
        a.dataset.validate(&pr).unwrap();
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig {
            alpha: 0.0,
            ..GaConfig::default()
        }
        .validate()
        .is_err());
        assert!(GaConfig {
            population: 1,
            ..GaConfig::default()
        }
        .validate()
        .is_err());
        assert!(GaConfig {
            sigma: -0.1,
            ..GaConfig::default()
        }
        .validate()
        .is_err());
        assert_eq!(GaConfig::default().offspring_per_generation(), 50);
    }
}

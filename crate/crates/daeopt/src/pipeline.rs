//! End-to-end runs: offline training, online optimization, refinement and
//! certification, with wall-clock timings.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use daeopt_core::bounds::{bound_value, linearize};
use daeopt_core::integrate::{self, reference_solve, uniform_grid};
use daeopt_core::optimize::{
    direct_objective, newton_refine, random_walk_refine, train_objective_generator, CandidateResult, GeneratorRun,
    RefineMethod, RefineOutcome, SurrogateObjective,
};
use daeopt_core::problems::{cantilever_weight, Benchmark, ObjectiveSpec, ParametricDaeProblem};
use daeopt_core::surrogate::{
    estimate_gamma, ga_training_loop, validation_params, ConstraintSurrogate, GammaEstimate, TrainingOutcome,
};
use daeopt_core::GaussLegendre;

use crate::config::{RefineConfig, RefineTarget, RunConfig};
use crate::error::{CliError, Result};
use crate::formats::{self, BoundRow, LandscapePoint, ReportMeta};

pub const CHECKPOINT_FILE: &str = "surrogate.ckpt";
pub const DATASET_FILE: &str = "dataset.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const CURVES_FILE: &str = "training_curves.csv";
pub const CANDIDATES_FILE: &str = "candidates.csv";
pub const LANDSCAPE_FILE: &str = "landscape.csv";
pub const GENERATOR_LOSS_FILE: &str = "generator_loss.csv";
pub const BOUND_FILE: &str = "bound.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const CONFIG_FILE: &str = "config.toml";

pub fn build_problem(cfg: &RunConfig) -> Result<(Benchmark, ParametricDaeProblem, ObjectiveSpec)> {
    let bench = cfg.benchmark()?;
    let (problem, obj) = bench.build().map_err(|e| CliError::InvalidConfig(e.to_string()))?;
    Ok((bench, problem, obj))
}

/// The benchmark's own objective, or a measurement fit read from `selector`.
pub fn select_objective(
    problem: &ParametricDaeProblem,
    builtin: ObjectiveSpec,
    selector: Option<&str>,
) -> Result<ObjectiveSpec> {
    match selector {
        None | Some("builtin") => Ok(builtin),
        Some(path) => {
            let path = Path::new(path);
            let file = open(path)?;
            let rows = formats::read_measurements(file)?;
            Ok(formats::measurement_objective(&rows, problem.state_dim(), problem.t_span())?.to_objective())
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingArtifact(path.to_path_buf()),
        _ => CliError::Io(e),
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

// ---------------------------------------------------------------- offline

pub struct TrainReport {
    pub outcome: TrainingOutcome,
    pub gamma: GammaEstimate,
    pub seconds: f64,
}

/// GA-driven training followed by the `γ` estimate on fresh parameters.
pub fn train_constraint(problem: &ParametricDaeProblem, cfg: &RunConfig) -> Result<TrainReport> {
    let start = Instant::now();
    let mut outcome = ga_training_loop(problem, &cfg.ga, cfg.seed)?;
    let params = validation_params(problem, cfg.gamma.validation_params, cfg.seed);
    let gamma = estimate_gamma(
        &outcome.surrogate,
        problem,
        &params,
        cfg.gamma.times_per_param,
        cfg.seed,
    )?;
    outcome.surrogate.set_gamma(gamma.gamma.clone())?;
    log::info!(
        "training finished: converged = {}, best max error = {:?}, gamma = {:?}",
        outcome.surrogate.converged,
        outcome.surrogate.best_max_error(),
        gamma.gamma
    );
    Ok(TrainReport {
        outcome,
        gamma,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn write_training_artifacts(dir: &Path, report: &TrainReport) -> Result<()> {
    let surr = &report.outcome.surrogate;
    formats::write_checkpoint(create(dir, CHECKPOINT_FILE)?, surr)?;
    formats::write_dataset(create(dir, DATASET_FILE)?, &report.outcome.dataset)?;
    formats::write_history(create(dir, HISTORY_FILE)?, &surr.history)?;
    formats::write_training_curves(create(dir, CURVES_FILE)?, &surr.history)?;
    Ok(())
}

pub fn load_surrogate(path: &Path) -> Result<ConstraintSurrogate> {
    formats::read_checkpoint(BufReader::new(open(path)?))
}

pub fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.resolved_output_dir().join(CHECKPOINT_FILE))
}

/// Refuses surrogates that do not belong to the selected problem.
pub fn check_surrogate(problem: &ParametricDaeProblem, surr: &ConstraintSurrogate) -> Result<()> {
    if surr.param_dim() != problem.param_dim() || surr.net.output_dim() != problem.state_dim() {
        return Err(CliError::InvalidConfig(format!(
            "checkpoint maps {} parameters to {} states but `{}` has {} and {}",
            surr.param_dim(),
            surr.net.output_dim(),
            problem.name(),
            problem.param_dim(),
            problem.state_dim()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- online

pub struct OptimizeReport {
    pub run: GeneratorRun,
    pub candidates: Vec<CandidateResult>,
    pub predict_seconds: f64,
    pub refine_seconds: f64,
    pub landscape: Vec<LandscapePoint>,
}

pub fn optimize(
    problem: &ParametricDaeProblem,
    obj: &ObjectiveSpec,
    surr: &ConstraintSurrogate,
    cfg: &RunConfig,
) -> Result<OptimizeReport> {
    check_surrogate(problem, surr)?;
    let start = Instant::now();
    let mut run = train_objective_generator(surr, problem, obj, &cfg.optimize, cfg.seed)?;
    let predict_seconds = start.elapsed().as_secs_f64();
    for c in &mut run.candidates {
        c.predict_seconds = predict_seconds;
    }
    log::info!(
        "generator: {} iterations, converged = {}, {} candidates",
        run.iterations,
        run.converged,
        run.candidates.len()
    );
    let start = Instant::now();
    let candidates = refine_candidates(problem, obj, surr, run.candidates.clone(), cfg)?;
    let refine_seconds = start.elapsed().as_secs_f64();
    let landscape = landscape(problem, obj, surr, cfg)?;
    Ok(OptimizeReport {
        run,
        candidates,
        predict_seconds,
        refine_seconds,
        landscape,
    })
}

/// Local refinement of each candidate. `J_refined` is always a direct
/// evaluation, whatever the refinement target.
pub fn refine_candidates(
    problem: &ParametricDaeProblem,
    obj: &ObjectiveSpec,
    surr: &ConstraintSurrogate,
    mut candidates: Vec<CandidateResult>,
    cfg: &RunConfig,
) -> Result<Vec<CandidateResult>> {
    let method = cfg.refine.method()?;
    let rule = GaussLegendre::new(cfg.optimize.quadrature_nodes)?;
    let zero_gamma = vec![0.0; problem.state_dim()];
    let sobj = SurrogateObjective::new(surr, &zero_gamma, obj, problem.t_span(), cfg.optimize.quadrature_nodes)?;
    for (i, c) in candidates.iter_mut().enumerate() {
        let start = Instant::now();
        let outcome = match cfg.refine.target {
            RefineTarget::Direct => run_refinement(method, &cfg.refine, problem, &c.p_pred, cfg.seed + i as u64, |p| {
                direct_objective(problem, obj, p, &rule)
            }),
            RefineTarget::Surrogate => {
                run_refinement(method, &cfg.refine, problem, &c.p_pred, cfg.seed + i as u64, |p| {
                    sobj.value(p, None)
                })
            }
        };
        if let Some(f) = &outcome.failure {
            log::warn!("refinement of candidate {} stopped early: {f}", i + 1);
        }
        c.p_refined = outcome.p;
        c.j_refined = direct_objective(problem, obj, &c.p_refined, &rule)?;
        c.method = method;
        c.refine_iterations = outcome.iterations;
        c.refine_seconds = start.elapsed().as_secs_f64();
    }
    Ok(candidates)
}

fn run_refinement<F>(
    method: RefineMethod,
    cfg: &RefineConfig,
    problem: &ParametricDaeProblem,
    p0: &[f64],
    seed: u64,
    evaluator: F,
) -> RefineOutcome
where
    F: FnMut(&[f64]) -> daeopt_core::Result<f64>,
{
    let (lo, hi) = (problem.lower(), problem.upper());
    match method {
        RefineMethod::None => RefineOutcome {
            p: p0.to_vec(),
            value: f64::NAN,
            iterations: 0,
            evaluations: 0,
            failure: None,
        },
        RefineMethod::Newton => newton_refine(p0, lo, hi, evaluator, cfg.newton_steps, cfg.fd_step),
        RefineMethod::RandomWalk => random_walk_refine(p0, lo, hi, evaluator, cfg.walk_iters, cfg.walk_step, seed),
    }
}

/// `Ĵ` with its `γ` interval on a uniform grid: 201 points for one
/// parameter, 41 × 41 for two, nothing beyond.
pub fn landscape(
    problem: &ParametricDaeProblem,
    obj: &ObjectiveSpec,
    surr: &ConstraintSurrogate,
    cfg: &RunConfig,
) -> Result<Vec<LandscapePoint>> {
    let (lo, hi) = (problem.lower(), problem.upper());
    let sobj = SurrogateObjective::new(surr, &surr.gamma, obj, problem.t_span(), cfg.optimize.quadrature_nodes)?;
    let grid: Vec<Vec<f64>> = match problem.param_dim() {
        1 => uniform_grid(lo[0], hi[0], 201).into_iter().map(|v| vec![v]).collect(),
        2 => {
            let (a, b) = (uniform_grid(lo[0], hi[0], 41), uniform_grid(lo[1], hi[1], 41));
            b.iter().flat_map(|&y| a.iter().map(move |&x| vec![x, y])).collect()
        }
        _ => return Ok(Vec::new()),
    };
    grid.into_iter()
        .map(|p| {
            let (j_pred, spread) = sobj.interval(&p)?;
            Ok(LandscapePoint { p, j_pred, spread })
        })
        .collect()
}

pub fn report_meta(cfg: &RunConfig, run: Option<&GeneratorRun>) -> ReportMeta {
    let mut meta = ReportMeta::default();
    meta.set("problem", &cfg.problem);
    meta.set("seed", cfg.seed);
    meta.set("refine", &cfg.refine.method);
    meta.set("refine_target", format!("{:?}", cfg.refine.target).to_lowercase());
    match cfg.refine.method.as_str() {
        "walk" => {
            meta.set("walk_iters", cfg.refine.walk_iters);
            meta.set("walk_step", cfg.refine.walk_step);
        }
        "newton" => {
            meta.set("newton_steps", cfg.refine.newton_steps);
            meta.set("fd_step", cfg.refine.fd_step);
        }
        _ => {}
    }
    if let Some(run) = run {
        meta.set("generator_iterations", run.iterations);
        meta.set("generator_converged", run.converged);
    }
    meta
}

pub fn write_optimize_artifacts(dir: &Path, cfg: &RunConfig, report: &OptimizeReport) -> Result<()> {
    formats::write_candidates(
        create(dir, CANDIDATES_FILE)?,
        &report_meta(cfg, Some(&report.run)),
        &report.candidates,
    )?;
    formats::write_series(
        create(dir, GENERATOR_LOSS_FILE)?,
        "iteration",
        "loss",
        &report.run.loss_history,
    )?;
    if !report.landscape.is_empty() {
        formats::write_landscape(create(dir, LANDSCAPE_FILE)?, &report.landscape)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- certification

/// Bound rows for the configured parameters (default: the box midpoint).
/// `δ_max` is the largest `γ` component; `ℏ` is the spacing of the exact-data
/// sample grid.
pub fn error_bounds(
    problem: &ParametricDaeProblem,
    surr: &ConstraintSurrogate,
    cfg: &RunConfig,
) -> Result<Vec<BoundRow>> {
    check_surrogate(problem, surr)?;
    let params = if cfg.bound.params.is_empty() {
        vec![problem
            .lower()
            .iter()
            .zip(problem.upper())
            .map(|(l, u)| 0.5 * (l + u))
            .collect()]
    } else {
        cfg.bound.params.clone()
    };
    let delta_max = surr.gamma.iter().copied().fold(0.0, f64::max);
    let (t0, tf) = problem.t_span();
    let sample_grid = uniform_grid(t0, tf, cfg.ga.samples_per_trajectory.max(2));
    let hbar = sample_grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let horizon = tf - t0;
    let mut rows = Vec::with_capacity(params.len());
    for p in params {
        problem
            .check_params(&p)
            .map_err(|e| CliError::InvalidConfig(e.to_string()))?;
        let traj = reference_solve(problem, &p)?;
        let row = match linearize(problem, &p, &traj, cfg.bound.linearization_samples) {
            Ok(lin) => {
                let b = |h: f64| bound_value(lin.p_norm, lin.a1_bar, lin.r_max, lin.n, delta_max, h);
                BoundRow {
                    a1_bar: Some(lin.a1_bar),
                    r_max: Some(lin.r_max),
                    p_norm: Some(lin.p_norm),
                    delta_max,
                    hbar,
                    bound: b(hbar),
                    horizon,
                    bound_horizon: Some(b(horizon)),
                    status: "ok".into(),
                    p,
                }
            }
            Err(daeopt_core::Error::PreconditionViolation(reason)) => BoundRow {
                a1_bar: None,
                r_max: None,
                p_norm: None,
                delta_max,
                hbar,
                bound: delta_max,
                horizon,
                bound_horizon: None,
                status: format!("gamma-fallback: {reason}"),
                p,
            },
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }
    Ok(rows)
}

// ---------------------------------------------------------------- bench

/// Reference optimum used to score a benchmark run: the published value, or
/// for the cantilever a dense scan of its closed-form objective.
pub fn oracle_optimum(bench: Benchmark) -> Option<Vec<f64>> {
    match bench {
        Benchmark::Cantilever => {
            let c = 4.0 + 5f64.cos();
            let n = 1_000_000;
            let best = (0..=n)
                .map(|i| 3.0 + i as f64 / n as f64)
                .map(|p| (cantilever_weight(p) * c / (p + 1.0), p))
                .fold((f64::INFINITY, f64::NAN), |a, b| if b.0 < a.0 { b } else { a });
            Some(vec![best.1])
        }
        other => other.reported_optimum(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub name: String,
    pub converged: bool,
    pub generations: usize,
    pub best_max_error: f64,
    pub generator_iterations: usize,
    pub p_pred: Vec<f64>,
    pub j_pred: f64,
    pub p_refined: Vec<f64>,
    pub j_refined: f64,
    pub oracle: Option<Vec<f64>>,
    pub train_seconds: f64,
    pub predict_seconds: f64,
    pub refine_seconds: f64,
}

impl BenchReport {
    fn deviation(p: &[f64], oracle: &Option<Vec<f64>>) -> Option<f64> {
        oracle
            .as_ref()
            .map(|o| p.iter().zip(o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn pred_deviation(&self) -> Option<f64> {
        Self::deviation(&self.p_pred, &self.oracle)
    }

    pub fn refined_deviation(&self) -> Option<f64> {
        Self::deviation(&self.p_refined, &self.oracle)
    }
}

pub struct BenchRun {
    pub report: BenchReport,
    pub train: TrainReport,
    pub optimize: OptimizeReport,
}

pub fn bench(cfg: &RunConfig) -> Result<BenchRun> {
    let (bench, problem, obj) = build_problem(cfg)?;
    let train = train_constraint(&problem, cfg)?;
    let surr = &train.outcome.surrogate;
    let optimize = optimize(&problem, &obj, surr, cfg)?;
    let best = optimize
        .candidates
        .first()
        .ok_or_else(|| CliError::NotConverged("generator produced no candidates".into()))?;
    let report = BenchReport {
        name: bench.to_string(),
        converged: surr.converged,
        generations: surr.history.len(),
        best_max_error: surr.best_max_error().unwrap_or(f64::NAN),
        generator_iterations: optimize.run.iterations,
        p_pred: best.p_pred.clone(),
        j_pred: best.j_pred,
        p_refined: best.p_refined.clone(),
        j_refined: best.j_refined,
        oracle: oracle_optimum(bench),
        train_seconds: train.seconds,
        predict_seconds: optimize.predict_seconds,
        refine_seconds: optimize.refine_seconds,
    };
    Ok(BenchRun {
        report,
        train,
        optimize,
    })
}

pub fn write_bench<W: std::io::Write>(w: W, r: &BenchReport) -> Result<()> {
    use formats::num;
    let m = r.p_pred.len();
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        "problem".to_string(),
        "converged".into(),
        "generations".into(),
        "max_error".into(),
    ];
    header.extend((1..=m).map(|i| format!("p{i}")));
    header.push("J_pred".into());
    header.extend((1..=m).map(|i| format!("p_refined{i}")));
    header.push("J_refined".into());
    header.extend((1..=m).map(|i| format!("oracle{i}")));
    header.extend(
        [
            "dp_pred",
            "dp_refined",
            "iters",
            "train_seconds",
            "predict_seconds",
            "refine_seconds",
        ]
        .map(String::from),
    );
    out.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let mut row = vec![
        r.name.clone(),
        r.converged.to_string(),
        r.generations.to_string(),
        num(r.best_max_error),
    ];
    row.extend(r.p_pred.iter().map(|&v| num(v)));
    row.push(num(r.j_pred));
    row.extend(r.p_refined.iter().map(|&v| num(v)));
    row.push(num(r.j_refined));
    match &r.oracle {
        Some(o) => row.extend(o.iter().map(|&v| num(v))),
        None => row.extend(std::iter::repeat_n(String::new(), m)),
    }
    row.extend([
        opt(r.pred_deviation()),
        opt(r.refined_deviation()),
        r.generator_iterations.to_string(),
        num(r.train_seconds),
        num(r.predict_seconds),
        num(r.refine_seconds),
    ]);
    out.write_record(&row)?;
    out.flush()?;
    Ok(())
}

/// Table-style text summary of a bench run.
pub fn format_bench(r: &BenchReport) -> String {
    let vec = |v: &[f64]| v.iter().map(|x| format!("{x:.10}")).collect::<Vec<_>>().join(", ");
    let mut s = String::new();
    s.push_str(&format!("benchmark        {}\n", r.name));
    s.push_str(&format!(
        "training         {} generations, best max error {:.3e}, converged {}\n",
        r.generations, r.best_max_error, r.converged
    ));
    s.push_str(&format!(
        "predicted p      [{}]  J = {:.6e}\n",
        vec(&r.p_pred),
        r.j_pred
    ));
    s.push_str(&format!(
        "refined p        [{}]  J = {:.12e}\n",
        vec(&r.p_refined),
        r.j_refined
    ));
    if let Some(o) = &r.oracle {
        s.push_str(&format!("oracle p         [{}]\n", vec(o)));
        s.push_str(&format!(
            "max |dp|         predicted {:.3e}, refined {:.3e}\n",
            r.pred_deviation().unwrap_or(f64::NAN),
            r.refined_deviation().unwrap_or(f64::NAN)
        ));
    }
    s.push_str(&format!("iterations       {}\n", r.generator_iterations));
    s.push_str(&format!(
        "cost (s)         training {:.2}  prediction {:.2}  correction {:.2}\n",
        r.train_seconds, r.predict_seconds, r.refine_seconds
    ));
    s
}

/// Trajectory of the true dynamics at `p`, for export.
pub fn solve_trajectory(problem: &ParametricDaeProblem, p: &[f64]) -> Result<integrate::Trajectory> {
    Ok(reference_solve(problem, p)?)
}

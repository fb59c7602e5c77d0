//! Argument parsing and subcommand dispatch.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{RefineTarget, RunConfig, OUTPUT_DIR_ENV};
use crate::error::{CliError, Result};
use crate::formats;
use crate::pipeline::{self, *};

#[derive(Debug, Parser)]
#[command(
    name = "daeopt",
    version,
    about = "Surrogate-network optimization for parametric DAEs"
)]
pub struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `scalar`, `cantilever` or `bidiag:<n>`.
    #[arg(long, global = true)]
    pub problem: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the constraint network and estimate its relaxation vector.
    TrainConstraint(TrainArgs),
    /// Train an objective generator against a saved constraint network.
    Optimize(OptimizeArgs),
    /// Re-run local refinement on a saved candidate report.
    Refine(RefineArgs),
    /// Full pipeline on a named benchmark with timings and oracle comparison.
    Bench(BenchArgs),
    /// Global error bound for a saved constraint network.
    ErrorBound(BoundArgs),
    /// Summarize the artifacts in the output directory.
    Report,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Initial population size.
    #[arg(long)]
    pub pop: Option<usize>,
    /// Exact points added per generation.
    #[arg(long)]
    pub per_gen: Option<usize>,
    #[arg(long)]
    pub max_gen: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Args, Default)]
pub struct RefineFlags {
    /// `none`, `newton` or `walk`.
    #[arg(long)]
    pub refine: Option<String>,
    /// Refine against the true dynamics or the frozen network.
    #[arg(long, value_parser = parse_target)]
    pub refine_target: Option<RefineTarget>,
    #[arg(long)]
    pub newton_steps: Option<usize>,
    #[arg(long)]
    pub walk_iters: Option<usize>,
    #[arg(long)]
    pub walk_step: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct OptimizeArgs {
    /// Constraint checkpoint; defaults to the one in the output directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `builtin` or a measurement file with header `t,x_i,target`.
    #[arg(long)]
    pub objective: Option<String>,
    /// Latent seeds per generator step.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub gen_lr: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[command(flatten)]
    pub refine: RefineFlags,
}

#[derive(Debug, Args, Default)]
pub struct RefineArgs {
    /// Candidate report to refine; defaults to the one in the output directory.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub objective: Option<String>,
    #[command(flatten)]
    pub refine: RefineFlags,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark name.
    pub name: String,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[command(flatten)]
    pub refine: RefineFlags,
}

#[derive(Debug, Args, Default)]
pub struct BoundArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Parameter to certify, comma separated; repeatable.
    #[arg(long = "param", value_delimiter = ',', num_args = 1, allow_negative_numbers = true, action = clap::ArgAction::Append)]
    pub params: Vec<f64>,
}

fn parse_target(s: &str) -> std::result::Result<RefineTarget, String> {
    match s {
        "direct" => Ok(RefineTarget::Direct),
        "surrogate" => Ok(RefineTarget::Surrogate),
        other => Err(format!("expected `direct` or `surrogate`, got `{other}`")),
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let ga = &mut cfg.ga;
        set(&mut ga.alpha, self.alpha);
        set(&mut ga.population, self.pop);
        set(&mut ga.points_per_generation, self.per_gen);
        set(&mut ga.max_generations, self.max_gen);
        set(&mut ga.epochs_per_generation, self.epochs);
        set(&mut ga.learning_rate, self.lr);
        set(&mut ga.hidden_layers, self.hidden.clone());
    }
}

impl RefineFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let r = &mut cfg.refine;
        set(&mut r.method, self.refine.clone());
        set(&mut r.target, self.refine_target);
        set(&mut r.newton_steps, self.newton_steps);
        set(&mut r.walk_iters, self.walk_iters);
        set(&mut r.walk_step, self.walk_step);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Config file, then global flags, then subcommand flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.problem, cli.problem.clone());
    set(&mut cfg.seed, cli.seed);
    if cli.output_dir.is_some() {
        cfg.output_dir = cli.output_dir.clone();
    }
    match &cli.command {
        Command::TrainConstraint(a) => a.apply(&mut cfg),
        Command::Optimize(a) => {
            set(&mut cfg.optimize.seeds, a.seeds);
            set(&mut cfg.optimize.learning_rate, a.gen_lr);
            set(&mut cfg.optimize.max_iterations, a.max_iters);
            a.refine.apply(&mut cfg);
        }
        Command::Refine(a) => a.refine.apply(&mut cfg),
        Command::Bench(a) => {
            cfg.problem = a.name.clone();
            a.train.apply(&mut cfg);
            set(&mut cfg.optimize.seeds, a.seeds);
            a.refine.apply(&mut cfg);
        }
        Command::ErrorBound(a) => {
            if !a.params.is_empty() {
                let m = cfg.benchmark()?.build()?.0.param_dim();
                if !a.params.len().is_multiple_of(m) {
                    return Err(CliError::InvalidConfig(format!(
                        "--param values must come in groups of {m}"
                    )));
                }
                cfg.bound.params = a.params.chunks(m).map(<[f64]>::to_vec).collect();
            }
        }
        Command::Report => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    let dir = cfg.resolved_output_dir();
    match &cli.command {
        Command::TrainConstraint(_) => train(&cfg, &dir),
        Command::Optimize(a) => optimize(&cfg, &dir, a),
        Command::Refine(a) => refine(&cfg, &dir, a),
        Command::Bench(_) => bench(&cfg, &dir),
        Command::ErrorBound(a) => error_bound(&cfg, &dir, a),
        Command::Report => report(&dir),
    }
}

fn save_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

fn not_converged(cfg: &RunConfig) -> CliError {
    CliError::NotConverged(format!(
        "constraint network did not reach alpha = {:e} within {} generations; artifacts written",
        cfg.ga.alpha, cfg.ga.max_generations
    ))
}

fn train(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let (_, problem, _) = build_problem(cfg)?;
    save_config(dir, cfg)?;
    let report = train_constraint(&problem, cfg)?;
    write_training_artifacts(dir, &report)?;
    let surr = &report.outcome.surrogate;
    println!(
        "trained {} in {:.1} s: {} generations, best max error {:.3e}, gamma = {:?}",
        problem.name(),
        report.seconds,
        surr.history.len(),
        surr.best_max_error().unwrap_or(f64::NAN),
        surr.gamma
    );
    if surr.converged {
        Ok(())
    } else {
        Err(not_converged(cfg))
    }
}

fn optimize(cfg: &RunConfig, dir: &Path, args: &OptimizeArgs) -> Result<()> {
    let (_, problem, builtin) = build_problem(cfg)?;
    let surr = load_surrogate(&checkpoint_path(cfg, args.checkpoint.as_deref()))?;
    let obj = select_objective(&problem, builtin, args.objective.as_deref())?;
    save_config(dir, cfg)?;
    let report = pipeline::optimize(&problem, &obj, &surr, cfg)?;
    write_optimize_artifacts(dir, cfg, &report)?;
    print_candidates(&report.candidates);
    Ok(())
}

fn refine(cfg: &RunConfig, dir: &Path, args: &RefineArgs) -> Result<()> {
    let (_, problem, builtin) = build_problem(cfg)?;
    let path = args.candidates.clone().unwrap_or_else(|| dir.join(CANDIDATES_FILE));
    let file = File::open(&path).map_err(|_| CliError::MissingArtifact(path.clone()))?;
    let (mut meta, candidates) = formats::read_candidates(BufReader::new(file))?;
    let surr = load_surrogate(&checkpoint_path(cfg, args.checkpoint.as_deref()))?;
    check_surrogate(&problem, &surr)?;
    let obj = select_objective(&problem, builtin, args.objective.as_deref())?;
    let refined = refine_candidates(&problem, &obj, &surr, candidates, cfg)?;
    for (k, v) in report_meta(cfg, None).0 {
        meta.0.insert(k, v);
    }
    fs::create_dir_all(dir)?;
    formats::write_candidates(
        BufWriter::new(File::create(dir.join(CANDIDATES_FILE))?),
        &meta,
        &refined,
    )?;
    print_candidates(&refined);
    Ok(())
}

fn bench(cfg: &RunConfig, dir: &Path) -> Result<()> {
    build_problem(cfg)?;
    save_config(dir, cfg)?;
    let run = pipeline::bench(cfg)?;
    write_training_artifacts(dir, &run.train)?;
    write_optimize_artifacts(dir, cfg, &run.optimize)?;
    let mut w = BufWriter::new(File::create(dir.join(BENCH_FILE))?);
    write_bench(&mut w, &run.report)?;
    w.flush()?;
    print!("{}", format_bench(&run.report));
    if run.report.converged {
        Ok(())
    } else {
        Err(not_converged(cfg))
    }
}

fn error_bound(cfg: &RunConfig, dir: &Path, args: &BoundArgs) -> Result<()> {
    let (_, problem, _) = build_problem(cfg)?;
    let surr = load_surrogate(&checkpoint_path(cfg, args.checkpoint.as_deref()))?;
    let rows = error_bounds(&problem, &surr, cfg)?;
    fs::create_dir_all(dir)?;
    formats::write_bounds(BufWriter::new(File::create(dir.join(BOUND_FILE))?), &rows)?;
    for r in &rows {
        println!(
            "p = {:?}: bound {:.6e} (hbar {:.4e}, delta_max {:.4e}) {}",
            r.p, r.bound, r.hbar, r.delta_max, r.status
        );
    }
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(CliError::MissingArtifact(dir.to_path_buf()));
    }
    let mut found = false;
    if let Ok(f) = File::open(dir.join(HISTORY_FILE)) {
        found = true;
        let hist = formats::read_history(f)?;
        if let Some((g, loss, err)) = hist.last() {
            let best = hist.iter().map(|h| h.2).fold(f64::INFINITY, f64::min);
            println!(
                "training: {} generations, last loss {loss:.3e}, last max error {err:.3e}, best {best:.3e} (gen {g})",
                hist.len()
            );
        }
    }
    if let Ok(f) = File::open(dir.join(CHECKPOINT_FILE)) {
        found = true;
        let surr = formats::read_checkpoint(BufReader::new(f))?;
        println!(
            "network: layers {:?}, converged {}, gamma {:?}",
            surr.net.sizes(),
            surr.converged,
            surr.gamma
        );
    }
    if let Ok(f) = File::open(dir.join(CANDIDATES_FILE)) {
        found = true;
        let (meta, rows) = formats::read_candidates(BufReader::new(f))?;
        let tags: Vec<String> = meta.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("candidates ({}):", tags.join(" "));
        print_candidates(&rows);
    }
    if let Ok(f) = File::open(dir.join(BOUND_FILE)) {
        found = true;
        for r in formats::read_bounds(f)? {
            println!("bound at {:?}: {:.6e} [{}]", r.p, r.bound, r.status);
        }
    }
    if let Ok(f) = File::open(dir.join(BENCH_FILE)) {
        found = true;
        let text = std::io::read_to_string(f)?;
        println!("bench:\n{}", text.trim_end());
    }
    if !found {
        return Err(CliError::MissingArtifact(dir.join(CHECKPOINT_FILE)));
    }
    Ok(())
}

fn print_candidates(rows: &[daeopt_core::optimize::CandidateResult]) {
    for (i, c) in rows.iter().enumerate() {
        println!(
            "{:>2}  p = {:?}  J_pred = {:.6e}  p_refined = {:?}  J_refined = {:.12e}  ({}, {} iters)",
            i + 1,
            c.p_pred,
            c.j_pred,
            c.p_refined,
            c.j_refined,
            c.method,
            c.refine_iterations
        );
    }
}

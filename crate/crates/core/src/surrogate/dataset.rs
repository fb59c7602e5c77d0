use alloc::format;
use alloc::vec::Vec;

use crate::integrate::{self, DegeneracyReport, Trajectory};
use crate::problems::ParametricDaeProblem;
use crate::rng::{self, SeededRng};
use crate::{Error, Result};

use super::GaConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordSet {
    Initial,
    Collocation,
    Exact,
}

impl RecordSet {
    pub fn tag(self) -> char {
        match self {
            RecordSet::Initial => 'I',
            RecordSet::Collocation => 'F',
            RecordSet::Exact => 'B',
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "I" => Some(RecordSet::Initial),
            "F" => Some(RecordSet::Collocation),
            "B" => Some(RecordSet::Exact),
            _ => None,
        }
    }
}

/// One training sample. `x` is empty for collocation records.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub p: Vec<f64>,
    pub x: Vec<f64>,
    pub generation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDataset {
    pub param_dim: usize,
    pub state_dim: usize,
    pub initial: Vec<Record>,
    pub collocation: Vec<Record>,
    pub exact: Vec<Record>,
}

impl TrainingDataset {
    pub fn new(param_dim: usize, state_dim: usize) -> Self {
        Self {
            param_dim,
            state_dim,
            initial: Vec::new(),
            collocation: Vec::new(),
            exact: Vec::new(),
        }
    }

    pub fn set(&self, set: RecordSet) -> &[Record] {
        match set {
            RecordSet::Initial => &self.initial,
            RecordSet::Collocation => &self.collocation,
            RecordSet::Exact => &self.exact,
        }
    }

    pub fn push(&mut self, set: RecordSet, record: Record) -> Result<()> {
        Error::check_len("record parameters", self.param_dim, record.p.len())?;
        let want = if set == RecordSet::Collocation {
            0
        } else {
            self.state_dim
        };
        Error::check_len("record state", want, record.x.len())?;
        match set {
            RecordSet::Initial => self.initial.push(record),
            RecordSet::Collocation => self.collocation.push(record),
            RecordSet::Exact => self.exact.push(record),
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.initial.len() + self.collocation.len() + self.exact.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks every record against the problem's box and time span.
    pub fn validate(&self, problem: &ParametricDaeProblem) -> Result<()> {
        let (t0, tf) = problem.t_span();
        for set in [RecordSet::Initial, RecordSet::Collocation, RecordSet::Exact] {
            for r in self.set(set) {
                problem.check_params(&r.p)?;
                if !(t0..=tf).contains(&r.t) {
                    return Err(Error::InvalidConfig(format!(
                        "{} record at t = {} outside [{t0}, {tf}]",
                        set.tag(),
                        r.t
                    )));
                }
                if let Some(i) = r.x.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "record state",
                        index: i,
                    });
                }
            }
        }
        Ok(())
    }
}

/// A parameter vector with its reference solution on a fine uniform grid.
#[derive(Debug, Clone)]
pub struct ReferenceEntry {
    pub p: Vec<f64>,
    pub trajectory: Trajectory,
    pub degeneracy: DegeneracyReport,
}

pub(crate) fn solve_entry(problem: &ParametricDaeProblem, p: &[f64], cfg: &GaConfig) -> Result<ReferenceEntry> {
    let (t0, tf) = problem.t_span();
    let grid = integrate::uniform_grid(t0, tf, cfg.reference_grid);
    let trajectory =
        integrate::integrate(problem, p, &cfg.solver.clone().with_grid(grid)).map_err(|e| Error::ReferenceSolve {
            p: p.to_vec(),
            source: alloc::boxed::Box::new(e),
        })?;
    let degeneracy = integrate::detect_degeneracy(problem, p, &trajectory, cfg.degeneracy_tol);
    Ok(ReferenceEntry {
        p: p.to_vec(),
        trajectory,
        degeneracy,
    })
}

/// Initial record plus exact records on the uniform sample grid, skipping
/// times within the exclusion radius of a flagged degeneracy.
pub(crate) fn push_entry_records(
    dataset: &mut TrainingDataset,
    problem: &ParametricDaeProblem,
    entry: &ReferenceEntry,
    cfg: &GaConfig,
    generation: usize,
) -> Result<()> {
    let (t0, tf) = problem.t_span();
    dataset.push(
        RecordSet::Initial,
        Record {
            t: t0,
            p: entry.p.clone(),
            x: problem.initial_state(&entry.p),
            generation,
        },
    )?;
    let radius = cfg.exclusion_fraction * (tf - t0);
    for t in integrate::uniform_grid(t0, tf, cfg.samples_per_trajectory) {
        if entry.degeneracy.near(t, radius) {
            continue;
        }
        dataset.push(
            RecordSet::Exact,
            Record {
                t,
                p: entry.p.clone(),
                x: entry.trajectory.eval(t),
                generation,
            },
        )?;
    }
    Ok(())
}

/// Solves at `p`, redrawing uniformly in the box on failure.
pub(crate) fn solve_with_resampling(
    problem: &ParametricDaeProblem,
    p: Vec<f64>,
    cfg: &GaConfig,
    rng: &mut SeededRng,
    failures: &mut usize,
) -> Result<ReferenceEntry> {
    let mut p = p;
    let mut last = None;
    for _ in 0..20 {
        match solve_entry(problem, &p, cfg) {
            Ok(entry) => return Ok(entry),
            Err(e) => {
                log::warn!("reference solve failed ({e}); resampling");
                *failures += 1;
                last = Some(e);
                p = rng::uniform_in_box(rng, problem.lower(), problem.upper());
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

pub(crate) fn push_collocation(
    dataset: &mut TrainingDataset,
    problem: &ParametricDaeProblem,
    count: usize,
    rng: &mut SeededRng,
    generation: usize,
) -> Result<()> {
    let (t0, tf) = problem.t_span();
    for _ in 0..count {
        let t = rng::uniform_in_box(rng, &[t0], &[tf])[0];
        let p = rng::uniform_in_box(rng, problem.lower(), problem.upper());
        dataset.push(
            RecordSet::Collocation,
            Record {
                t,
                p,
                x: Vec::new(),
                generation,
            },
        )?;
    }
    Ok(())
}

/// `M` Latin-hypercube draws with their reference solutions.
pub(crate) fn initial_entries(
    problem: &ParametricDaeProblem,
    population: usize,
    cfg: &GaConfig,
    seed: u64,
    failures: &mut usize,
) -> Result<Vec<ReferenceEntry>> {
    if population < 2 {
        return Err(Error::InvalidConfig("initial population must be at least 2".into()));
    }
    let mut rng = rng::substream(seed, 1);
    let draws = rng::latin_hypercube(&mut rng, problem.lower(), problem.upper(), population);
    let mut resample = rng::substream(seed, 2);
    draws
        .into_iter()
        .map(|p| solve_with_resampling(problem, p, cfg, &mut resample, failures))
        .collect()
}

/// Initial records, exact records and collocation points for `population`
/// Latin-hypercube parameter draws.
pub fn build_initial_dataset(
    problem: &ParametricDaeProblem,
    population: usize,
    n_colloc: usize,
    cfg: &GaConfig,
    seed: u64,
) -> Result<TrainingDataset> {
    let mut failures = 0;
    let entries = initial_entries(problem, population, cfg, seed, &mut failures)?;
    assemble(problem, &entries, n_colloc, cfg, seed)
}

pub(crate) fn assemble(
    problem: &ParametricDaeProblem,
    entries: &[ReferenceEntry],
    n_colloc: usize,
    cfg: &GaConfig,
    seed: u64,
) -> Result<TrainingDataset> {
    let mut dataset = TrainingDataset::new(problem.param_dim(), problem.state_dim());
    for entry in entries {
        push_entry_records(&mut dataset, problem, entry, cfg, 0)?;
    }
    push_collocation(&mut dataset, problem, n_colloc, &mut rng::substream(seed, 3), 0)?;
    Ok(dataset)
}

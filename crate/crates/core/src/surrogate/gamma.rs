use alloc::vec::Vec;

use crate::problems::ParametricDaeProblem;
use crate::rng;
use crate::{integrate, Error, Result};

use super::StateModel;

/// Fewer samples than this per state are rejected.
pub const MIN_RESIDUAL_SAMPLES: usize = 30;

/// Per-state residual statistics and the resulting half-width
/// `γ = max{|E − 3D|, |E + 3D|}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaEstimate {
    pub gamma: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_dev: Vec<f64>,
    /// Residual samples `ζ = x̂ − x`, one list per state.
    pub samples: Vec<Vec<f64>>,
}

impl GammaEstimate {
    /// Statistics of per-state residual lists (sample standard deviation).
    pub fn from_samples(samples: Vec<Vec<f64>>) -> Result<Self> {
        let mut mean = Vec::with_capacity(samples.len());
        let mut std_dev = Vec::with_capacity(samples.len());
        let mut gamma = Vec::with_capacity(samples.len());
        for s in &samples {
            if s.len() < MIN_RESIDUAL_SAMPLES {
                return Err(Error::InsufficientSamples {
                    required: MIN_RESIDUAL_SAMPLES,
                    found: s.len(),
                });
            }
            let e = s.iter().sum::<f64>() / s.len() as f64;
            let var = s.iter().map(|v| (v - e) * (v - e)).sum::<f64>() / (s.len() - 1) as f64;
            let d = libm::sqrt(var);
            mean.push(e);
            std_dev.push(d);
            gamma.push(half_width(e, d));
        }
        Ok(Self {
            gamma,
            mean,
            std_dev,
            samples,
        })
    }

    /// Fraction of `samples[k]` inside `[E_k − 3D_k, E_k + 3D_k]`.
    pub fn coverage(&self, samples: &[Vec<f64>]) -> Vec<f64> {
        samples
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let (lo, hi) = (
                    self.mean[k] - 3.0 * self.std_dev[k],
                    self.mean[k] + 3.0 * self.std_dev[k],
                );
                s.iter().filter(|v| (lo..=hi).contains(*v)).count() as f64 / s.len().max(1) as f64
            })
            .collect()
    }
}

pub fn half_width(mean: f64, std_dev: f64) -> f64 {
    libm::fabs(mean - 3.0 * std_dev).max(libm::fabs(mean + 3.0 * std_dev))
}

/// Residuals `x̂ − x` at `times_per_param` random times for each parameter.
pub fn residual_samples<M: StateModel + ?Sized>(
    model: &M,
    problem: &ParametricDaeProblem,
    params: &[Vec<f64>],
    times_per_param: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = problem.state_dim();
    let (t0, tf) = problem.t_span();
    let mut rng = rng::substream(seed, 11);
    let mut samples = alloc::vec![Vec::with_capacity(params.len() * times_per_param); n];
    let mut y = alloc::vec![0.0; n];
    for p in params {
        problem.check_params(p)?;
        let mut times: Vec<f64> = (0..times_per_param)
            .map(|_| rng::uniform_in_box(&mut rng, &[t0], &[tf])[0])
            .collect();
        times.sort_by(f64::total_cmp);
        let mut grid = Vec::with_capacity(times.len() + 2);
        grid.push(t0);
        grid.extend_from_slice(&times);
        grid.push(tf);
        grid.dedup();
        let traj = integrate::reference_solve_on(problem, p, grid).map_err(|e| Error::ReferenceSolve {
            p: p.clone(),
            source: alloc::boxed::Box::new(e),
        })?;
        for &t in &times {
            model.state(t, p, &mut y);
            let x = traj.eval(t);
            for k in 0..n {
                samples[k].push(y[k] - x[k]);
            }
        }
    }
    Ok(samples)
}

/// γ from residuals on held-out parameters.
pub fn estimate_gamma<M: StateModel + ?Sized>(
    model: &M,
    problem: &ParametricDaeProblem,
    validation_params: &[Vec<f64>],
    times_per_param: usize,
    seed: u64,
) -> Result<GammaEstimate> {
    GammaEstimate::from_samples(residual_samples(
        model,
        problem,
        validation_params,
        times_per_param,
        seed,
    )?)
}

/// Fresh Latin-hypercube draws on a stream disjoint from training.
pub fn validation_params(problem: &ParametricDaeProblem, count: usize, seed: u64) -> Vec<Vec<f64>> {
    rng::latin_hypercube(&mut rng::substream(seed, 12), problem.lower(), problem.upper(), count)
}

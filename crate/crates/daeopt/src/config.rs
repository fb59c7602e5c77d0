//! Run configuration: a TOML file whose every key is optional.

use std::path::{Path, PathBuf};

use daeopt_core::optimize::{OptimizeConfig, RefineMethod};
use daeopt_core::problems::Benchmark;
use daeopt_core::surrogate::GaConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "DAEOPT_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `scalar`, `cantilever` or `bidiag:<n>`.
    pub problem: String,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub ga: GaConfig,
    pub gamma: GammaConfig,
    pub optimize: OptimizeConfig,
    pub refine: RefineConfig,
    pub bound: BoundConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: "scalar".into(),
            seed: 1,
            output_dir: None,
            ga: GaConfig::default(),
            gamma: GammaConfig::default(),
            optimize: OptimizeConfig::default(),
            refine: RefineConfig::default(),
            bound: BoundConfig::default(),
        }
    }
}

/// Held-out residual sampling for `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaConfig {
    pub validation_params: usize,
    pub times_per_param: usize,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            validation_params: 50,
            times_per_param: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefineTarget {
    /// Reference solves of the true dynamics.
    Direct,
    /// The frozen constraint network.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// `none`, `newton` or `walk`.
    pub method: String,
    pub target: RefineTarget,
    pub newton_steps: usize,
    /// Finite-difference step as a fraction of the box width.
    pub fd_step: f64,
    pub walk_iters: usize,
    /// Walk proposal half-width as a fraction of the box width.
    pub walk_step: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            method: "newton".into(),
            target: RefineTarget::Direct,
            newton_steps: 10,
            fd_step: 1e-6,
            walk_iters: 300,
            walk_step: 0.10,
        }
    }
}

impl RefineConfig {
    pub fn method(&self) -> Result<RefineMethod> {
        self.method
            .parse()
            .map_err(|e: daeopt_core::Error| CliError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    /// Trajectory points used for `r_max`.
    pub linearization_samples: usize,
    /// Parameters to certify; empty means the box midpoint.
    pub params: Vec<Vec<f64>>,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            linearization_samples: 50,
            params: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingArtifact(path.to_path_buf()),
            _ => CliError::Io(e),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run configuration is always serializable")
    }

    pub fn benchmark(&self) -> Result<Benchmark> {
        self.problem
            .parse()
            .map_err(|e: daeopt_core::Error| CliError::InvalidConfig(e.to_string()))
    }

    /// Output directory: the configured one, else `$DAEOPT_OUTPUT_DIR`, else `daeopt-out`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("daeopt-out"))
    }

    /// Checks every section without running anything.
    pub fn validate(&self) -> Result<()> {
        self.benchmark()?;
        self.ga.validate()?;
        self.optimize.validate()?;
        self.refine.method()?;
        if self.gamma.validation_params == 0 || self.gamma.times_per_param == 0 {
            return Err(CliError::InvalidConfig("gamma sampling counts must be positive".into()));
        }
        if self.refine.newton_steps == 0 || !(self.refine.fd_step > 0.0) || !(self.refine.walk_step > 0.0) {
            return Err(CliError::InvalidConfig(
                "refinement steps and step sizes must be positive".into(),
            ));
        }
        if self.bound.linearization_samples < 2 {
            return Err(CliError::InvalidConfig(
                "bound needs at least 2 linearization samples".into(),
            ));
        }
        Ok(())
    }
}

//! The JSON configuration file. Every section is optional and falls back to
//! the built-in defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::em::EmOptions;
use crate::error::{Error, Result};
use crate::hemodynamics::HemodynamicsConfig;
use crate::io::read_json;
use crate::sim::SimulationConfig;
use crate::sparse::ReweightedOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub table1_runs: usize,
    pub table3_runs: usize,
    /// Replicate `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    pub threshold: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            table1_runs: 50,
            table3_runs: 20,
            base_seed: 0,
            threshold: crate::sparse::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub simulation: SimulationConfig,
    pub hemodynamics: HemodynamicsConfig,
    pub algorithm1: ReweightedOptions,
    pub em: EmOptions,
    pub benchmark: BenchmarkConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Config = read_json(path).map_err(|e| match e {
            Error::Format { path, reason } => Error::Config(format!("{}: {reason}", path.display())),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.simulation;
        if !(s.t_r > 0.0) || !(s.sigma2 >= 0.0) || s.n_samples < 3 || !(s.dt > 0.0) {
            return Err(Error::Config(
                "simulation needs t_r > 0, sigma2 >= 0, n_samples >= 3 and dt > 0".into(),
            ));
        }
        if !(s.hemodynamic_gain > 0.0) || !(s.obs_noise_std >= 0.0) {
            return Err(Error::Config("simulation gain must be > 0 and noise std >= 0".into()));
        }
        let h = &self.hemodynamics;
        if h.taps == 0 || h.pcs >= h.taps || h.n_samples < 2 || !(h.t_r > 0.0) || !(h.dt > 0.0) {
            return Err(Error::Config(
                "hemodynamics needs taps > pcs, n_samples >= 2, t_r > 0 and dt > 0".into(),
            ));
        }
        if (h.t_r - s.t_r).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "hemodynamics.t_r ({}) must equal simulation.t_r ({})",
                h.t_r, s.t_r
            )));
        }
        let a = &self.algorithm1;
        if !(a.tol > 0.0) || a.max_iter == 0 || !(a.gamma0 > 0.0) {
            return Err(Error::Config("algorithm1 needs tol > 0, max_iter > 0 and gamma0 > 0".into()));
        }
        let e = &self.em;
        if !(e.tol > 0.0) || e.max_iter == 0 || !(e.gamma0 > 0.0) || !(e.sigma0 > 0.0) {
            return Err(Error::Config("em needs tol > 0, max_iter > 0, gamma0 > 0 and sigma0 > 0".into()));
        }
        if !(self.benchmark.threshold >= 0.0) {
            return Err(Error::Config("benchmark threshold must be >= 0".into()));
        }
        Ok(())
    }

    /// Algorithm 1 options with the sampling interval taken from the simulation section.
    pub fn reweighted_options(&self) -> ReweightedOptions {
        ReweightedOptions {
            t_r: self.simulation.t_r,
            ..self.algorithm1
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::statespace::{noise_shape, regularized_inverse, ConnectivityMatrix, ProcessNoiseCov};

use super::ard::{gamma_step, GammaWeights, DEFAULT_GAMMA0};
use super::astep::{a_objective, a_step, linear_a_step, sigma_step, AStepOptions};
use super::regression::{a_vec, build_regression};

/// Which A update the reweighted loop uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AStepKind {
    /// Penalized fit of the exact sampled model over stable matrices.
    Exact,
    /// Closed-form posterior mean of the first-order model.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReweightedOptions {
    pub t_r: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub gamma0: f64,
    pub a_step: AStepKind,
    pub inner: AStepOptions,
}

impl Default for ReweightedOptions {
    fn default() -> Self {
        Self {
            t_r: 2.0,
            tol: 1e-3,
            max_iter: 100,
            gamma0: DEFAULT_GAMMA0,
            a_step: AStepKind::Exact,
            inner: AStepOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sigma2: f64,
    /// Penalized A-step objective at the previous and the new iterate, both
    /// with this iteration's `Γ` and `Q`.
    pub objective_before: f64,
    pub objective_after: f64,
    pub relative_change: f64,
    pub pruned: usize,
    pub inner_iterations: usize,
    pub inner_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightedResult {
    pub a_hat: ConnectivityMatrix,
    pub sigma_hat: f64,
    pub gamma: GammaWeights,
    pub iterations: usize,
    pub converged: bool,
    pub stable: bool,
    pub log: Vec<IterationRecord>,
}

/// Reweighted ARD estimation of `A` and `σ` from a measured `N × n` neuronal series.
pub fn run_reweighted(series: &Mat, opts: &ReweightedOptions) -> Result<ReweightedResult> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 || !(opts.gamma0 > 0.0) {
        return Err(Error::Config(
            "reweighted options need tol > 0, max_iter > 0 and gamma0 > 0".into(),
        ));
    }
    let data = build_regression(series, opts.t_r)?;
    let stats = data.stats();
    let n = data.n();
    let t_r = opts.t_r;

    let mut a = -Mat::identity(n, n);
    let mut gamma = GammaWeights::constant(n * n, opts.gamma0);
    let mut sigma2 = 0.0;
    let mut log = Vec::new();
    let mut converged = false;

    for iteration in 1..=opts.max_iter {
        sigma2 = sigma_step(&stats, &a, t_r)?;
        let q = ProcessNoiseCov {
            q: noise_shape(&a, t_r) * sigma2,
            sigma: sigma2.sqrt(),
        };

        let (a_new, before, after, inner_iterations, inner_converged) = match opts.a_step {
            AStepKind::Exact => {
                let out = a_step(&stats, &gamma, &q, t_r, &a, &opts.inner)?;
                (out.a, out.objective_before, out.objective_after, out.iterations, out.converged)
            }
            AStepKind::Linear => {
                let a_new = linear_a_step(&data, &gamma, &q.q)?;
                let qinv = regularized_inverse(&q.q)?;
                let before = a_objective(&stats, &a, &qinv, &gamma, t_r).0;
                let after = a_objective(&stats, &a_new, &qinv, &gamma, t_r).0;
                (a_new, before, after, 0, true)
            }
        };

        gamma = gamma_step(&a_vec(&a_new), &gamma, &data, &q.q)?;
        let norm = a_new.norm();
        let relative_change = if norm > 0.0 { (&a_new - &a).norm() / norm } else { f64::INFINITY };
        a = a_new;
        log.push(IterationRecord {
            iteration,
            sigma2,
            objective_before: before,
            objective_after: after,
            relative_change,
            pruned: gamma.pruned_count(),
            inner_iterations,
            inner_converged,
        });
        if relative_change < opts.tol {
            converged = true;
            break;
        }
    }

    let a_hat = ConnectivityMatrix::new(a)?;
    let stable = a_hat.is_stable(opts.inner.stability_margin);
    Ok(ReweightedResult {
        a_hat,
        sigma_hat: sigma2.sqrt(),
        gamma,
        iterations: log.len(),
        converged,
        stable,
        log,
    })
}

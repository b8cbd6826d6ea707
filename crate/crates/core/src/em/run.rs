use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hemodynamics::HemoBasis;
use crate::linalg::{self, Mat};
use crate::sparse::{
    a_vec, estimate_alpha, gamma_update, linear_information, run_reweighted, GammaWeights, ReweightedOptions,
    DEFAULT_GAMMA0,
};
use crate::statespace::{process_noise_integral, regularized_inverse, ConnectivityMatrix};

use super::mstep::{m_step, MStepOptions, MStepReport};
use super::stats::{e_step, log_prior, penalized_surrogate, SufficientStats};
use super::system::{build_extended_system, EMParameters};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub gamma0: f64,
    pub sigma0: f64,
    pub m_step: MStepOptions,
    /// Feed the smoothed means to the measured-activity estimator instead of
    /// running EM. Ablation only.
    pub plug_in: bool,
    /// Relative slack for the per-iteration monotonicity audit.
    pub monotonicity_tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 60,
            gamma0: DEFAULT_GAMMA0,
            sigma0: 1e-2,
            m_step: MStepOptions::default(),
            plug_in: false,
            monotonicity_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmIteration {
    pub iteration: usize,
    /// Penalized surrogate at `η⁽ˡ⁾` and `η⁽ˡ⁺¹⁾`, both with this iteration's statistics and `Γ⁽ˡ⁾`.
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    /// `ln p(Y | η⁽ˡ⁾)` from the filter.
    pub log_likelihood: f64,
    /// `ln p(Y | η⁽ˡ⁾) + ln p(η⁽ˡ⁾; Γ⁽ˡ⁾)`.
    pub log_posterior: f64,
    pub relative_change: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub pruned: usize,
    pub monotone: bool,
    pub jittered: bool,
    pub m_step: MStepReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmDiagnostics {
    pub iterations: Vec<EmIteration>,
    /// Iterations where the surrogate decreased although the M step succeeded.
    pub monotonicity_violations: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub params: EMParameters,
    pub converged: bool,
    pub iterations: usize,
    pub diagnostics: EmDiagnostics,
}

/// `A = −I`, `σ = σ₀`, `α = μ_α`, `λ = √(tr[(Y−Ȳ)(Y−Ȳ)ᵀ]/(10Nn))` with `Ȳ`
/// the grand mean of all entries.
pub fn initial_parameters(y: &Mat, basis: &HemoBasis, opts: &EmOptions) -> Result<EMParameters> {
    let (big_n, n) = y.shape();
    if big_n * n == 0 {
        return Err(Error::invalid("empty observations"));
    }
    let mean = y.mean();
    let ss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let lambda = (ss / (10.0 * (big_n * n) as f64)).sqrt();
    if !(lambda > 0.0) {
        return Err(Error::invalid("observations are constant"));
    }
    Ok(EMParameters {
        a: ConnectivityMatrix::new(-Mat::identity(n, n))?,
        alpha: basis.mu_alpha.clone(),
        sigma: opts.sigma0,
        lambda,
        gamma: GammaWeights::constant(n * n, opts.gamma0),
    })
}

fn check_options(opts: &EmOptions) -> Result<()> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 || !(opts.gamma0 > 0.0) || !(opts.sigma0 > 0.0) {
        return Err(Error::Config(
            "EM options need tol > 0, max_iter > 0, gamma0 > 0 and sigma0 > 0".into(),
        ));
    }
    Ok(())
}

/// ARD update with the expected-state information `T_R²(Q⁻¹ ⊗ NΥ₀₀)`.
fn em_gamma_update(stats: &SufficientStats, eta: &EMParameters, t_r: f64) -> Result<GammaWeights> {
    let n = stats.n();
    let sxx = stats.upsilon.view((0, 0), (n, n)).into_owned() * stats.samples as f64;
    let q = process_noise_integral(&eta.a, eta.sigma, t_r)?;
    let qinv = regularized_inverse(&q.q)?;
    let info = linear_information(&sxx, &qinv, t_r);
    gamma_update(&a_vec(eta.a.matrix()), &eta.gamma, &info)
}

/// MAP-EM estimate of `η` from an `N × n` BOLD series.
pub fn em_run(y: &Mat, basis: &HemoBasis, opts: &EmOptions) -> Result<EmResult> {
    check_options(opts)?;
    basis.validate()?;
    if y.nrows() <= basis.taps {
        return Err(Error::invalid(format!(
            "need more samples ({}) than FIR taps ({})",
            y.nrows(),
            basis.taps
        )));
    }
    if !linalg::all_finite(y) {
        return Err(Error::invalid("observations have non-finite entries"));
    }
    let start = Instant::now();
    if opts.plug_in {
        return plug_in(y, basis, opts, start);
    }

    let mut eta = initial_parameters(y, basis, opts)?;
    let mut log = Vec::new();
    let mut converged = false;
    for iteration in 1..=opts.max_iter {
        let sys = build_extended_system(&eta, basis)?;
        let (stats, summary) = e_step(y, &sys)?;
        let before = penalized_surrogate(&stats, &eta, basis)?;
        let (mut next, report) = m_step(&stats, &eta, basis, &opts.m_step)?;
        let after = penalized_surrogate(&stats, &next, basis)?;
        let monotone = after >= before - opts.monotonicity_tol * before.abs().max(1.0);
        next.gamma = em_gamma_update(&stats, &next, basis.t_r)?;

        let norm = next.a.matrix().norm();
        let relative_change = (next.a.matrix() - eta.a.matrix()).norm() / norm;
        log.push(EmIteration {
            iteration,
            surrogate_before: before,
            surrogate_after: after,
            log_likelihood: summary.log_likelihood,
            log_posterior: summary.log_likelihood + log_prior(&eta, basis),
            relative_change,
            sigma: next.sigma,
            lambda: next.lambda,
            pruned: next.gamma.pruned_count(),
            monotone,
            jittered: summary.jittered,
            m_step: report,
        });
        eta = next;
        if relative_change < opts.tol {
            converged = true;
            break;
        }
    }
    let monotonicity_violations = log.iter().filter(|r| r.m_step.a_success && !r.monotone).count();
    Ok(EmResult {
        params: eta,
        converged,
        iterations: log.len(),
        diagnostics: EmDiagnostics {
            iterations: log,
            monotonicity_violations,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// Smooth once at the initial parameters and treat the smoothed means as
/// measured activity.
fn plug_in(y: &Mat, basis: &HemoBasis, opts: &EmOptions, start: Instant) -> Result<EmResult> {
    let eta0 = initial_parameters(y, basis, opts)?;
    let (_, summary) = e_step(y, &build_extended_system(&eta0, basis)?)?;
    let rw_opts = ReweightedOptions {
        t_r: basis.t_r,
        gamma0: opts.gamma0,
        ..ReweightedOptions::default()
    };
    let rw = run_reweighted(&summary.smoothed_activity, &rw_opts)?;
    let alpha = estimate_alpha(&summary.smoothed_activity, y, basis)?;
    let params = EMParameters {
        a: rw.a_hat,
        alpha: alpha.alpha,
        sigma: rw.sigma_hat,
        lambda: alpha.lambda2.sqrt(),
        gamma: rw.gamma,
    };
    Ok(EmResult {
        params,
        converged: rw.converged,
        iterations: rw.iterations,
        diagnostics: EmDiagnostics {
            iterations: Vec::new(),
            monotonicity_violations: 0,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}

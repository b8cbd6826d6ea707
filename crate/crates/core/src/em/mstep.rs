use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hemodynamics::HemoBasis;
use crate::linalg::{self, Mat, Vector};
use crate::optimize::BfgsOptions;
use crate::sparse::{a_vec, minimize_connectivity, transition_cost, GammaWeights, TransitionStats};
use crate::statespace::{noise_shape, noise_shape_gradient, ConnectivityMatrix, DEFAULT_STABILITY_MARGIN};

use super::stats::SufficientStats;
use super::system::EMParameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MStepOptions {
    pub stability_margin: f64,
    pub bfgs: BfgsOptions,
    /// Alternations between the α and λ updates.
    pub alpha_passes: usize,
    pub alpha_tol: f64,
}

impl Default for MStepOptions {
    fn default() -> Self {
        Self {
            stability_margin: DEFAULT_STABILITY_MARGIN,
            bfgs: BfgsOptions {
                max_iter: 200,
                ..BfgsOptions::default()
            },
            alpha_passes: 50,
            alpha_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MStepReport {
    /// False when the (A, σ) block failed and the previous values were kept.
    pub a_success: bool,
    pub a_failure: Option<String>,
    pub a_iterations: usize,
    pub a_converged: bool,
    pub alpha_passes: usize,
}

/// Leading-block statistics in the form the transition cost expects, so that
/// its value is `tr[W (Λ₀₀ − Ψ₀₀Φᵀ − ΦΨ₀₀ᵀ + ΦΥ₀₀Φᵀ)]`.
fn leading_block(stats: &SufficientStats) -> TransitionStats {
    let n = stats.n();
    TransitionStats {
        spp: stats.lambda.view((0, 0), (n, n)).into_owned(),
        sxp: stats.psi.view((0, 0), (n, n)).transpose(),
        sxx: stats.upsilon.view((0, 0), (n, n)).into_owned(),
        samples: 1.0,
    }
}

/// Noise intensity maximizing the expected log-likelihood at fixed `A`:
/// `σ² = tr[Qₛ(A)⁻¹ M(A)] / n`.
pub fn sigma_from_stats(stats: &SufficientStats, a: &Mat, t_r: f64) -> Result<f64> {
    let lb = leading_block(stats);
    let w = linalg::spd_inverse(&noise_shape(a, t_r))?;
    let (tau, _) = transition_cost(&lb, a, &w, t_r);
    Ok((tau / a.nrows() as f64).max(0.0).sqrt())
}

/// `(N/2)[n ln τ(A) + ln|Qₛ(A)|] + ½ vec(Aᵀ)ᵀΓ⁻¹vec(Aᵀ)`, the negated
/// surrogate with σ profiled out (up to constants), and its gradient.
fn profiled_cost(lb: &TransitionStats, a: &Mat, gamma: &GammaWeights, samples: f64, t_r: f64) -> Result<(f64, Mat)> {
    let n = a.nrows();
    let nf = n as f64;
    let qs = noise_shape(a, t_r);
    let w = linalg::spd_inverse(&qs)?;
    let ld = linalg::log_det_spd(&qs)?;
    let (tau, g_tau) = transition_cost(lb, a, &w, t_r);
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Numerical(format!("transition residual {tau} is not positive")));
    }
    let e = linalg::expm(&(a.transpose() * t_r));
    let m = lb.residual_moment(&e);
    let g_qs = (&w - &w * m * &w * (nf / tau)) * (0.5 * samples);
    let mut grad = g_tau * (0.5 * samples * nf / tau) + noise_shape_gradient(a, t_r, &linalg::symmetrize(&g_qs));
    let av = a_vec(a);
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if !gamma.is_pruned(k) {
                grad[(i, j)] += av[k] / gamma.gamma[k];
            }
        }
    }
    let f = 0.5 * samples * (nf * tau.ln() + ld) + 0.5 * gamma.penalty(&av);
    Ok((f, grad))
}

/// (A, σ) block: quasi-Newton over stable `A` on the profiled
/// noise-dependent terms plus the ARD prior, then the closed-form σ.
pub fn connectivity_noise_step(
    stats: &SufficientStats,
    eta: &EMParameters,
    t_r: f64,
    opts: &MStepOptions,
) -> Result<(ConnectivityMatrix, f64, usize, bool)> {
    let lb = leading_block(stats);
    let samples = stats.samples as f64;
    let sol = minimize_connectivity(eta.a.matrix(), &eta.gamma, opts.stability_margin, &opts.bfgs, |a| {
        profiled_cost(&lb, a, &eta.gamma, samples, t_r)
    })?;
    let sigma = sigma_from_stats(stats, &sol.a, t_r)?;
    if !(sigma > 0.0) {
        return Err(Error::Numerical("noise intensity collapsed to zero".into()));
    }
    Ok((ConnectivityMatrix::new(sol.a)?, sigma, sol.iterations, sol.converged))
}

/// (α, λ) block: alternates the generalized-ridge α with `λ² = rss(α)/n`.
pub fn alpha_lambda_step(
    stats: &SufficientStats,
    basis: &HemoBasis,
    lambda: f64,
    opts: &MStepOptions,
) -> Result<(Vec<f64>, f64, usize)> {
    let n = stats.n() as f64;
    let samples = stats.samples as f64;
    let (t_lambda, t_xi) = stats.block_traces();
    let h = &basis.h;
    let g = linalg::symmetrize(&(h.transpose() * t_lambda * h));
    let b = h.transpose() * t_xi;
    let mu = basis.mu();
    let prec = Vector::from_iterator(basis.sigma_alpha.len(), basis.sigma_alpha.iter().map(|v| 1.0 / v));
    let trd = stats.delta.trace();
    let floor = f64::EPSILON * (trd / n).max(f64::MIN_POSITIVE);
    let rss = |alpha: &Vector| trd - 2.0 * alpha.dot(&b) + alpha.dot(&(&g * alpha));

    let mut lambda2 = lambda * lambda;
    let mut alpha = mu.clone();
    let mut passes = 0;
    for _ in 0..opts.alpha_passes.max(1) {
        passes += 1;
        let ratio = lambda2 / samples;
        let lhs = &g + Mat::from_diagonal(&(&prec * ratio));
        let rhs = &b + prec.component_mul(&mu) * ratio;
        let (chol, _) = linalg::robust_cholesky(&lhs)?;
        alpha = chol.solve(&rhs);
        let next = (rss(&alpha) / n).max(floor);
        let change = (next - lambda2).abs() / lambda2;
        lambda2 = next;
        if change < opts.alpha_tol {
            break;
        }
    }
    Ok((alpha.iter().copied().collect(), lambda2.sqrt(), passes))
}

/// One block-coordinate ascent pass on the penalized surrogate. `Γ` is
/// carried over unchanged.
pub fn m_step(
    stats: &SufficientStats,
    eta_prev: &EMParameters,
    basis: &HemoBasis,
    opts: &MStepOptions,
) -> Result<(EMParameters, MStepReport)> {
    eta_prev.validate(basis)?;
    if stats.n() != eta_prev.a.n() || stats.taps() != basis.taps {
        return Err(Error::invalid("statistics do not match the model dimensions"));
    }
    let mut eta = eta_prev.clone();
    let mut report = MStepReport {
        a_success: true,
        a_failure: None,
        a_iterations: 0,
        a_converged: false,
        alpha_passes: 0,
    };
    match connectivity_noise_step(stats, eta_prev, basis.t_r, opts) {
        Ok((a, sigma, iterations, converged)) => {
            eta.a = a;
            eta.sigma = sigma;
            report.a_iterations = iterations;
            report.a_converged = converged;
        }
        Err(e) => {
            report.a_success = false;
            report.a_failure = Some(e.to_string());
        }
    }
    let (alpha, lambda, passes) = alpha_lambda_step(stats, basis, eta_prev.lambda, opts)?;
    eta.alpha = alpha;
    eta.lambda = lambda;
    report.alpha_passes = passes;
    Ok((eta, report))
}

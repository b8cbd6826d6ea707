use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::optimize::{self, BfgsOptions};
use crate::statespace::{max_real_eigenvalue, noise_shape, regularized_inverse, ProcessNoiseCov, DEFAULT_STABILITY_MARGIN};

use super::ard::{linear_information, posterior_solve, GammaWeights};
use super::regression::{a_from_vec, a_vec, RegressionData, TransitionStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AStepOptions {
    pub stability_margin: f64,
    pub bfgs: BfgsOptions,
}

impl Default for AStepOptions {
    fn default() -> Self {
        Self {
            stability_margin: DEFAULT_STABILITY_MARGIN,
            bfgs: BfgsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AStepOutcome {
    pub a: Mat,
    pub objective_before: f64,
    pub objective_after: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Exact-model transition cost `tr[Q⁻¹ (X₊ − X e^{AᵀT_R})ᵀ(X₊ − X e^{AᵀT_R})]`
/// and its gradient with respect to `A`.
pub fn transition_cost(stats: &TransitionStats, a: &Mat, qinv: &Mat, t_r: f64) -> (f64, Mat) {
    let e = linalg::expm(&(a.transpose() * t_r));
    let m = stats.residual_moment(&e);
    let f = linalg::frob_dot(qinv, &m);
    let g_e = (&stats.sxx * &e - &stats.sxp) * qinv * 2.0;
    // E = exp(AᵀT_R): the gradient with respect to Aᵀ is T_R·L(A T_R, G_E)
    let g_at = linalg::exp_frechet_adjoint(&(a.transpose() * t_r), &g_e) * t_r;
    (f, g_at.transpose())
}

/// Penalized objective of the A step: transition cost plus `vec(Aᵀ)ᵀΓ⁻¹vec(Aᵀ)`
/// over unpruned entries. Returns the value and the gradient with respect to `A`.
pub fn a_objective(stats: &TransitionStats, a: &Mat, qinv: &Mat, gamma: &GammaWeights, t_r: f64) -> (f64, Mat) {
    let (f, mut g) = transition_cost(stats, a, qinv, t_r);
    let av = a_vec(a);
    let n = a.nrows();
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if !gamma.is_pruned(k) {
                g[(i, j)] += 2.0 * av[k] / gamma.gamma[k];
            }
        }
    }
    (f + gamma.penalty(&av), g)
}

pub(crate) struct ConnectivitySolution {
    pub a: Mat,
    pub f_start: f64,
    pub f_end: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A stable matrix close to `start` with pruned entries set to zero.
/// Off-diagonal entries are halved until the matrix is stable.
pub(crate) fn stable_start(start: &Mat, gamma: &GammaWeights, margin: f64) -> Result<Mat> {
    let n = start.nrows();
    let mut a = start.clone();
    for i in 0..n {
        for j in 0..n {
            if gamma.is_pruned(i * n + j) {
                a[(i, j)] = 0.0;
            }
        }
    }
    for _ in 0..60 {
        if max_real_eigenvalue(&a) < -margin {
            return Ok(a);
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    a[(i, j)] *= 0.5;
                }
            }
        }
    }
    Err(Error::Unstable(
        "no stable starting point compatible with the pruned pattern".into(),
    ))
}

/// Minimizes `objective(A)` over stable `A` with pruned entries held at zero.
///
/// Free entries are rescaled to `z = a/√γ` so the ARD penalty becomes
/// isotropic; unstable trial points are rejected by the line search.
pub(crate) fn minimize_connectivity<F>(
    start: &Mat,
    gamma: &GammaWeights,
    margin: f64,
    bfgs: &BfgsOptions,
    mut objective: F,
) -> Result<ConnectivitySolution>
where
    F: FnMut(&Mat) -> Result<(f64, Mat)>,
{
    let n = start.nrows();
    if gamma.len() != n * n {
        return Err(Error::invalid(format!(
            "{} weights for a {n}x{n} matrix",
            gamma.len()
        )));
    }
    let a0 = stable_start(start, gamma, margin)?;
    let free: Vec<usize> = (0..n * n).filter(|&k| !gamma.is_pruned(k)).collect();
    let scale: Vec<f64> = free.iter().map(|&k| gamma.gamma[k].sqrt()).collect();
    let to_matrix = |z: &Vector| {
        let mut a = Mat::zeros(n, n);
        for ((&k, s), v) in free.iter().zip(&scale).zip(z.iter()) {
            a[(k / n, k % n)] = s * v;
        }
        a
    };
    let z0 = Vector::from_iterator(free.len(), free.iter().zip(&scale).map(|(&k, s)| a0[(k / n, k % n)] / s));

    let (f_start, _) = objective(&a0).map_err(|e| Error::Optimizer {
        reason: format!("objective failed at the start point: {e}"),
        best: Some(a0.clone()),
    })?;

    let out = optimize::minimize(
        |z| {
            let a = to_matrix(z);
            match objective(&a) {
                Ok((f, g)) => {
                    let gz = Vector::from_iterator(
                        free.len(),
                        free.iter().zip(&scale).map(|(&k, s)| s * g[(k / n, k % n)]),
                    );
                    Ok((f, gz))
                }
                // treat evaluation failures like infeasible points
                Err(_) => Ok((f64::INFINITY, Vector::from_element(free.len(), f64::NAN))),
            }
        },
        |z| {
            let a = to_matrix(z);
            linalg::all_finite(&a) && max_real_eigenvalue(&a) < -margin
        },
        z0,
        bfgs,
    )?;
    Ok(ConnectivitySolution {
        a: to_matrix(&out.x),
        f_start,
        f_end: out.f,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// A step of the reweighted scheme: minimizes the exact-model penalized cost
/// over stable matrices, warm-started at `start`.
pub fn a_step(
    stats: &TransitionStats,
    gamma: &GammaWeights,
    q: &ProcessNoiseCov,
    t_r: f64,
    start: &Mat,
    opts: &AStepOptions,
) -> Result<AStepOutcome> {
    let n = stats.n();
    if q.q.shape() != (n, n) || start.shape() != (n, n) {
        return Err(Error::invalid("dimension mismatch in a_step"));
    }
    let qinv = regularized_inverse(&q.q)?;
    let sol = minimize_connectivity(start, gamma, opts.stability_margin, &opts.bfgs, |a| {
        Ok(a_objective(stats, a, &qinv, gamma, t_r))
    })?;
    Ok(AStepOutcome {
        a: sol.a,
        objective_before: sol.f_start,
        objective_after: sol.f_end,
        iterations: sol.iterations,
        converged: sol.converged,
    })
}

/// Posterior mean of `vec(Aᵀ)` under the first-order model
/// `vec(ΔX) = Φ vec(Aᵀ) + w`, `w ∼ N(0, Q ⊗ I)`. Not constrained to be stable.
pub fn linear_a_step(data: &RegressionData, gamma: &GammaWeights, q: &Mat) -> Result<Mat> {
    let n = data.n();
    if q.shape() != (n, n) || gamma.len() != n * n {
        return Err(Error::invalid("dimension mismatch in linear_a_step"));
    }
    let qinv = regularized_inverse(q)?;
    let sxx = data.x.transpose() * &data.x;
    let info = linear_information(&sxx, &qinv, data.t_r);
    // Φᵀ(Q⁻¹⊗I)vec(ΔX) = T_R vec(XᵀΔX Q⁻¹)
    let rhs = linalg::vec_cols(&(data.x.transpose() * &data.delta * &qinv)) * data.t_r;
    let (_, sol) = posterior_solve(gamma, &info, Some(&rhs))?;
    Ok(a_from_vec(&sol, n))
}

/// `σ² = tr[Qₛ(A)⁻¹ (X₊ − X e^{AᵀT_R})ᵀ(X₊ − X e^{AᵀT_R})] / (N n)` with the
/// unit-intensity noise shape `Qₛ`.
pub fn sigma_step(stats: &TransitionStats, a: &Mat, t_r: f64) -> Result<f64> {
    let n = stats.n();
    if a.shape() != (n, n) {
        return Err(Error::invalid("dimension mismatch in sigma_step"));
    }
    let qs_inv = regularized_inverse(&noise_shape(a, t_r))?;
    let e = linalg::mat_exp(&a.transpose(), t_r)?;
    let m = stats.residual_moment(&e);
    Ok((linalg::frob_dot(&qs_inv, &m) / (stats.samples * n as f64)).max(0.0))
}

pub fn sigma_step_from_series(xplus: &Mat, x: &Mat, a: &Mat, t_r: f64) -> Result<f64> {
    if xplus.shape() != x.shape() {
        return Err(Error::invalid("X₊ and X must have the same shape"));
    }
    sigma_step(&TransitionStats::from_series(xplus, x), a, t_r)
}

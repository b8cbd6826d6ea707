//! Statistical linearization of the hemodynamics: sample parameters from
//! their prior, collect impulse responses, and reduce them to a mean plus a
//! few principal directions.

use nalgebra::SymmetricEigen;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::balloon::{integrate_balloon, BalloonParams, BoldPhysics, OutputConstants};
use crate::error::{Error, Result};
use crate::io::row_matrix;
use crate::linalg::{Mat, Vector};

/// Mean and variance of one Gaussian prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian {
    pub const fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }
}

/// Prior over the biophysical parameters (variances, not standard deviations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HemoPrior {
    pub kappa: Gaussian,
    pub gamma: Gaussian,
    pub tau: Gaussian,
    pub alpha: Gaussian,
    pub rho: Gaussian,
}

impl Default for HemoPrior {
    fn default() -> Self {
        Self {
            kappa: Gaussian::new(0.65, 0.015),
            gamma: Gaussian::new(0.41, 0.002),
            tau: Gaussian::new(0.98, 0.0568),
            alpha: Gaussian::new(0.32, 0.0015),
            rho: Gaussian::new(0.34, 0.0024),
        }
    }
}

impl HemoPrior {
    pub fn mean(&self) -> BalloonParams {
        BalloonParams {
            kappa: self.kappa.mean,
            gamma: self.gamma.mean,
            tau: self.tau.mean,
            alpha: self.alpha.mean,
            rho: self.rho.mean,
        }
    }
}

/// Settings for building the FIR hemodynamic basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HemodynamicsConfig {
    pub prior: HemoPrior,
    pub physics: BoldPhysics,
    /// FIR length `s`.
    pub taps: usize,
    /// Number of principal directions `p`.
    pub pcs: usize,
    pub n_samples: usize,
    pub dt: f64,
    pub t_r: f64,
    pub seed: u64,
    /// Prior variance of the weight on the mean response.
    pub mean_prior_variance: f64,
    /// Height of the probing pulse; responses are reported per unit height.
    pub impulse_height: f64,
}

impl Default for HemodynamicsConfig {
    fn default() -> Self {
        Self {
            prior: HemoPrior::default(),
            physics: BoldPhysics::default(),
            taps: 16,
            pcs: 4,
            n_samples: 1000,
            dt: 0.01,
            t_r: 2.0,
            seed: 0,
            mean_prior_variance: 1.0,
            impulse_height: DEFAULT_IMPULSE_HEIGHT,
        }
    }
}

/// FIR basis `H = [h̄ u₁ … u_p]` with the Gaussian prior on its coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemoBasis {
    #[serde(with = "row_matrix")]
    pub h: Mat,
    pub mu_alpha: Vec<f64>,
    /// Diagonal of `Σ_α`: the mean-weight variance followed by the leading eigenvalues.
    pub sigma_alpha: Vec<f64>,
    /// Full eigenvalue spectrum of the response covariance, nonincreasing.
    pub eigenvalues: Vec<f64>,
    pub taps: usize,
    pub pcs: usize,
    pub t_r: f64,
}

impl HemoBasis {
    pub fn mean_response(&self) -> Vector {
        self.h.column(0).into_owned()
    }

    pub fn mu(&self) -> Vector {
        Vector::from_vec(self.mu_alpha.clone())
    }

    /// FIR response `H α`.
    pub fn response(&self, alpha: &Vector) -> Vector {
        &self.h * alpha
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.pcs + 1;
        if self.h.nrows() != self.taps
            || self.h.ncols() != k
            || self.mu_alpha.len() != k
            || self.sigma_alpha.len() != k
        {
            return Err(Error::invalid("basis dimensions are inconsistent"));
        }
        if self.sigma_alpha.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("prior variances must be positive"));
        }
        Ok(())
    }
}

/// Lower bound applied to prior variances so that `Σ_α` stays invertible.
const MIN_PRIOR_VARIANCE: f64 = 1e-30;

fn draw_truncated(
    rng: &mut ChaCha8Rng,
    g: Gaussian,
    admissible: impl Fn(f64) -> bool,
) -> Result<f64> {
    let dist = Normal::new(g.mean, g.var.max(0.0).sqrt())
        .map_err(|e| Error::Config(format!("bad prior {g:?}: {e}")))?;
    for _ in 0..10_000 {
        let v = dist.sample(rng);
        if admissible(v) {
            return Ok(v);
        }
    }
    Err(Error::Config(format!("prior {g:?} has negligible mass on the admissible range")))
}

/// Independent draws from the truncated Gaussian prior.
pub fn sample_hemo_params(seed: u64, n_samples: usize, prior: &HemoPrior) -> Result<Vec<BalloonParams>> {
    if n_samples < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n_samples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = |v: f64| v > 0.0;
    let unit = |v: f64| v > 0.0 && v < 1.0;
    (0..n_samples)
        .map(|_| {
            Ok(BalloonParams {
                kappa: draw_truncated(&mut rng, prior.kappa, pos)?,
                gamma: draw_truncated(&mut rng, prior.gamma, pos)?,
                tau: draw_truncated(&mut rng, prior.tau, pos)?,
                alpha: draw_truncated(&mut rng, prior.alpha, unit)?,
                rho: draw_truncated(&mut rng, prior.rho, unit)?,
            })
        })
        .collect()
}

fn steps_per_sample(t_r: f64, dt: f64) -> Result<usize> {
    let m = (t_r / dt).round();
    if m < 1.0 || ((m * dt) - t_r).abs() > 1e-9 * t_r {
        return Err(Error::invalid(format!(
            "sampling interval {t_r} must be an integer multiple of dt {dt}"
        )));
    }
    Ok(m as usize)
}

/// Default height of the probing pulse used to read off the small-signal
/// impulse response.
pub const DEFAULT_IMPULSE_HEIGHT: f64 = 1e-3;

/// Raw BOLD response to a rectangular pulse of height `height` lasting one
/// sampling interval, sampled every `t_r` and truncated to `taps` values.
pub fn pulse_response(
    params: &BalloonParams,
    consts: &OutputConstants,
    taps: usize,
    t_r: f64,
    dt: f64,
    height: f64,
) -> Result<Vector> {
    let m = steps_per_sample(t_r, dt)?;
    let mut x = vec![0.0; taps * m];
    let pulse = m.min(x.len());
    x[..pulse].fill(height);
    let y = integrate_balloon(&x, params, consts, dt)?;
    Ok(Vector::from_iterator(taps, (0..taps).map(|k| y[k * m])))
}

/// Response per unit of a discrete impulse, probed with a pulse of the given
/// height and rescaled by it.
pub fn impulse_response_with_height(
    params: &BalloonParams,
    consts: &OutputConstants,
    taps: usize,
    t_r: f64,
    dt: f64,
    height: f64,
) -> Result<Vector> {
    if !(height > 0.0) {
        return Err(Error::invalid(format!("impulse height must be positive, got {height}")));
    }
    Ok(pulse_response(params, consts, taps, t_r, dt, height)? / height)
}

/// Small-signal FIR response of the hemodynamics at `T_R` resolution.
pub fn impulse_response(
    params: &BalloonParams,
    consts: &OutputConstants,
    taps: usize,
    t_r: f64,
    dt: f64,
) -> Result<Vector> {
    impulse_response_with_height(params, consts, taps, t_r, dt, DEFAULT_IMPULSE_HEIGHT)
}

fn sorted_eigen(cov: Mat) -> (Vec<f64>, Mat) {
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Mat::zeros(eig.eigenvectors.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        // sign convention: largest-magnitude component positive
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col = -col;
        }
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Empirical mean, covariance and eigen-structure of sampled responses,
/// collected into `H = [h̄ u₁ … u_p]`.
pub fn build_fir_basis(
    responses: &[Vector],
    pcs: usize,
    t_r: f64,
    mean_prior_variance: f64,
) -> Result<HemoBasis> {
    let count = responses.len();
    let taps = responses.first().map_or(0, |r| r.len());
    if count < 2 || taps == 0 || responses.iter().any(|r| r.len() != taps) {
        return Err(Error::invalid("need at least two responses of equal nonzero length"));
    }
    if pcs >= count.min(taps) {
        return Err(Error::invalid(format!(
            "number of components {pcs} must be below min({count}, {taps})"
        )));
    }
    if !(mean_prior_variance > 0.0) {
        return Err(Error::invalid("mean prior variance must be positive"));
    }
    let mean = responses.iter().fold(Vector::zeros(taps), |acc, r| acc + r) / count as f64;
    let mut cov = Mat::zeros(taps, taps);
    for r in responses {
        let d = r - &mean;
        cov += &d * d.transpose();
    }
    cov /= count as f64;
    let (eigenvalues, vectors) = sorted_eigen(cov);

    let mut h = Mat::zeros(taps, pcs + 1);
    h.set_column(0, &mean);
    for i in 0..pcs {
        h.set_column(i + 1, &vectors.column(i));
    }
    let mut mu_alpha = vec![0.0; pcs + 1];
    mu_alpha[0] = 1.0;
    let sigma_alpha = std::iter::once(mean_prior_variance)
        .chain(eigenvalues[..pcs].iter().map(|v| v.max(MIN_PRIOR_VARIANCE)))
        .collect();
    Ok(HemoBasis {
        h,
        mu_alpha,
        sigma_alpha,
        eigenvalues,
        taps,
        pcs,
        t_r,
    })
}

/// Sampled impulse responses in sample order.
pub fn sample_responses(cfg: &HemodynamicsConfig) -> Result<Vec<Vector>> {
    let params = sample_hemo_params(cfg.seed, cfg.n_samples, &cfg.prior)?;
    params
        .par_iter()
        .map(|p| {
            let consts = OutputConstants::derive(&cfg.physics, p.rho);
            impulse_response_with_height(p, &consts, cfg.taps, cfg.t_r, cfg.dt, cfg.impulse_height)
        })
        .collect()
}

/// Full pipeline: sample, simulate, reduce.
pub fn build_basis(cfg: &HemodynamicsConfig) -> Result<HemoBasis> {
    let responses = sample_responses(cfg)?;
    build_fir_basis(&responses, cfg.pcs, cfg.t_r, cfg.mean_prior_variance)
}

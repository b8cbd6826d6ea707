//! Synthetic resting-state data: exact-discretization neuronal trajectories
//! pushed through the Balloon model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hemodynamics::{
    integrate_balloon, sample_hemo_params, BalloonParams, HemodynamicsConfig, OutputConstants,
};
use crate::io::{row_matrix, RowMatrix};
use crate::linalg::{robust_cholesky, Mat, Vector};
use crate::statespace::{process_noise_integral, ConnectivityMatrix, DEFAULT_STABILITY_MARGIN};

/// Seven-region sparse network used throughout the benchmarks (rows are targets).
#[rustfmt::skip]
pub const DEFAULT_A: [f64; 49] = [
    -0.5,  0.0,   0.0,  0.0,  -0.2, 0.0,  0.0,
     0.0, -0.5,   0.0, -0.45, -0.3, 0.0,  0.0,
     0.0,  0.0,  -0.5,  0.8,   0.0, 0.0,  0.0,
     0.0,  0.6,   0.0, -0.5,  -0.1, 0.6,  0.0,
     0.3,  0.0,  -0.55, 0.0,  -0.5, 0.2,  0.0,
     0.0,  0.0,   0.0,  0.0,   0.3, -0.5, 0.45,
     0.15, 0.0,   0.2,  0.0,   0.0, 0.0, -0.5,
];

/// Data-generating system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub a_true: ConnectivityMatrix,
    /// Process-noise variance σ².
    pub sigma2: f64,
    pub t_r: f64,
    pub n_samples: usize,
}

pub fn default_ground_truth() -> GroundTruth {
    GroundTruth {
        a_true: ConnectivityMatrix::from_rows(7, &DEFAULT_A).expect("static matrix"),
        sigma2: 0.01,
        t_r: 2.0,
        n_samples: 600,
    }
}

/// Default input scale for the hemodynamics. With the default network the
/// neuronal series reaches about −0.6, below the `−γ` level at which the
/// inflow of the ODE crosses zero; the gain keeps the drive in the regime
/// where the Balloon model is defined.
pub const DEFAULT_HEMODYNAMIC_GAIN: f64 = 0.1;

/// How hemodynamic parameters are chosen for each region when generating BOLD data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegionHemodynamics {
    /// Every region uses the prior mean.
    #[default]
    PriorMean,
    /// Independent prior draw per region.
    Random,
}

/// The `simulation` section of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// Ground-truth coupling; `None` means the built-in seven-region network.
    pub a_true: Option<RowMatrix>,
    pub sigma2: f64,
    pub t_r: f64,
    pub n_samples: usize,
    /// Balloon integration step (s).
    pub dt: f64,
    /// Scale applied to the neuronal series before it drives the Balloon model.
    pub hemodynamic_gain: f64,
    /// Standard deviation of additive white observation noise on the BOLD signal.
    pub obs_noise_std: f64,
    pub region_hemodynamics: RegionHemodynamics,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let t = default_ground_truth();
        Self {
            a_true: None,
            sigma2: t.sigma2,
            t_r: t.t_r,
            n_samples: t.n_samples,
            dt: 0.01,
            hemodynamic_gain: DEFAULT_HEMODYNAMIC_GAIN,
            obs_noise_std: 0.0,
            region_hemodynamics: RegionHemodynamics::PriorMean,
        }
    }
}

impl SimulationConfig {
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let a_true = match &self.a_true {
            Some(rows) => ConnectivityMatrix::new(rows.clone().into_matrix()?)?,
            None => default_ground_truth().a_true,
        };
        Ok(GroundTruth {
            a_true,
            sigma2: self.sigma2,
            t_r: self.t_r,
            n_samples: self.n_samples,
        })
    }
}

/// Simulated neuronal and BOLD series sampled every `T_R` (rows are time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    #[serde(with = "row_matrix")]
    pub x: Mat,
    #[serde(with = "row_matrix")]
    pub y: Mat,
    pub seed: u64,
    pub meta: SimulationConfig,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `x(k+1) = e^{A T_R} x(k) + w(k)`, `w(k) ~ N(0, Q)`, from `x(0) = 0`.
/// Row `k` of the result is `x(k+1)`.
pub fn simulate_neuronal(truth: &GroundTruth, seed: u64) -> Result<Mat> {
    let a = &truth.a_true;
    if !a.is_stable(DEFAULT_STABILITY_MARGIN) {
        return Err(Error::Unstable("ground-truth connectivity must be stable".into()));
    }
    if !(truth.sigma2 >= 0.0) {
        return Err(Error::invalid("noise variance must be >= 0"));
    }
    let n = a.n();
    let big_n = truth.n_samples;
    let mut out = Mat::zeros(big_n, n);
    if truth.sigma2 == 0.0 {
        return Ok(out);
    }
    let phi = a.discretize(truth.t_r)?.phi;
    let q = process_noise_integral(a, truth.sigma2.sqrt(), truth.t_r)?;
    let (chol, _) = robust_cholesky(&q.q)?;
    let l = chol.l();
    let mut rng = stream_rng(seed, 0);
    let mut x = Vector::zeros(n);
    for k in 0..big_n {
        let z = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        x = &phi * &x + &l * z;
        out.set_row(k, &x.transpose());
    }
    Ok(out)
}

/// Per-region Balloon integration with zero-order hold from `T_R` to `dt`,
/// sampled back at the `T_R` instants.
pub fn simulate_bold_regions(
    x: &Mat,
    regions: &[(BalloonParams, OutputConstants)],
    t_r: f64,
    dt: f64,
) -> Result<Mat> {
    if regions.len() != x.ncols() {
        return Err(Error::invalid(format!(
            "{} hemodynamic parameter sets for {} regions",
            regions.len(),
            x.ncols()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("neuronal series has non-finite entries"));
    }
    let m = (t_r / dt).round() as usize;
    if m == 0 || ((m as f64 * dt) - t_r).abs() > 1e-9 * t_r {
        return Err(Error::invalid(format!(
            "sampling interval {t_r} must be an integer multiple of dt {dt}"
        )));
    }
    let big_n = x.nrows();
    let columns: Vec<Vec<f64>> = (0..x.ncols())
        .into_par_iter()
        .map(|i| {
            let fine: Vec<f64> = (0..big_n * m).map(|j| x[(j / m, i)]).collect();
            let (p, c) = &regions[i];
            let y = integrate_balloon(&fine, p, c, dt)?;
            Ok((0..big_n).map(|k| y[k * m]).collect())
        })
        .collect::<Result<_>>()?;
    Ok(Mat::from_fn(big_n, x.ncols(), |k, i| columns[i][k]))
}

/// Same hemodynamics in every region.
pub fn simulate_bold(
    x: &Mat,
    params: &BalloonParams,
    consts: &OutputConstants,
    t_r: f64,
    dt: f64,
) -> Result<Mat> {
    let regions = vec![(*params, *consts); x.ncols()];
    simulate_bold_regions(x, &regions, t_r, dt)
}

/// Complete dataset: neuronal series, BOLD series and optional observation noise.
pub fn simulate_dataset(
    sim: &SimulationConfig,
    hemo: &HemodynamicsConfig,
    seed: u64,
) -> Result<SimOutput> {
    let truth = sim.ground_truth()?;
    let x = simulate_neuronal(&truth, seed)?;
    let n = truth.a_true.n();
    let params: Vec<BalloonParams> = match sim.region_hemodynamics {
        RegionHemodynamics::PriorMean => vec![hemo.prior.mean(); n],
        RegionHemodynamics::Random => {
            sample_hemo_params(seed ^ 0x9e37_79b9_7f4a_7c15, n.max(2), &hemo.prior)?
                .into_iter()
                .take(n)
                .collect()
        }
    };
    let regions: Vec<_> = params
        .into_iter()
        .map(|p| (p, OutputConstants::derive(&hemo.physics, p.rho)))
        .collect();
    let drive = &x * sim.hemodynamic_gain;
    let mut y = simulate_bold_regions(&drive, &regions, truth.t_r, sim.dt)?;
    if sim.obs_noise_std > 0.0 {
        let mut rng = stream_rng(seed, 1);
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sim.obs_noise_std * z;
        }
    }
    Ok(SimOutput {
        x,
        y,
        seed,
        meta: sim.clone(),
    })
}

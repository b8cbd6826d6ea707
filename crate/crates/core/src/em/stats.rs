use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::hemodynamics::HemoBasis;
use crate::linalg::{self, Mat, Vector};
use crate::sparse::a_vec;
use crate::statespace::{process_noise_integral, regularize};

use super::smoother::{backward_step, forward, Companion, SmootherOutput};
use super::system::{EMParameters, ExtendedStateSystem};

/// The five smoothed averages of the E step, each normalized by `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `(1/N) Σ_{k=1..N} 𝐏ˢ(k) + x̂ˢ(k) x̂ˢ(k)ᵀ`
    pub lambda: Mat,
    /// `(1/N) Σ_{k=1..N} 𝐏ˢ(k−1) + x̂ˢ(k−1) x̂ˢ(k−1)ᵀ`
    pub upsilon: Mat,
    /// `(1/N) Σ_{k=1..N} 𝐏ˢ(k) 𝐆(k−1)ᵀ + x̂ˢ(k) x̂ˢ(k−1)ᵀ`
    pub psi: Mat,
    /// `(1/N) Σ y(k) x̂ˢ(k)ᵀ`
    pub xi: Mat,
    /// `(1/N) Σ y(k) y(k)ᵀ`
    pub delta: Mat,
    pub samples: usize,
}

impl SufficientStats {
    pub fn n(&self) -> usize {
        self.delta.nrows()
    }

    pub fn taps(&self) -> usize {
        self.lambda.nrows() / self.n()
    }

    /// Leading-block transition moment `Λ₀₀ − Ψ₀₀Φᵀ − ΦΨ₀₀ᵀ + ΦΥ₀₀Φᵀ`.
    pub fn transition_moment(&self, phi: &Mat) -> Mat {
        let n = self.n();
        let l = self.lambda.view((0, 0), (n, n));
        let p = self.psi.view((0, 0), (n, n));
        let u = self.upsilon.view((0, 0), (n, n));
        let pf = p * phi.transpose();
        linalg::symmetrize(&(l - &pf - pf.transpose() + phi * u * phi.transpose()))
    }

    /// Block traces `T[i,j] = tr Λᵢⱼ` (`s × s`) and `t[j] = tr Ξⱼ`.
    pub fn block_traces(&self) -> (Mat, Vector) {
        let n = self.n();
        let s = self.taps();
        let t_lambda = Mat::from_fn(s, s, |i, j| self.lambda.view((i * n, j * n), (n, n)).trace());
        let t_xi = Vector::from_fn(s, |j, _| self.xi.view((0, j * n), (n, n)).trace());
        (t_lambda, t_xi)
    }

    /// `tr(Δ − Ξ𝐂ᵀ − 𝐂Ξᵀ + 𝐂Λ𝐂ᵀ)` for the response `h`.
    pub fn observation_residual(&self, h: &Vector) -> f64 {
        let (t_lambda, t_xi) = self.block_traces();
        self.delta.trace() - 2.0 * h.dot(&t_xi) + h.dot(&(&t_lambda * h))
    }
}

fn check_alignment(out: &SmootherOutput, y: &Mat) -> Result<usize> {
    let big_n = y.nrows();
    if out.xs.len() != big_n + 1 || out.ps.len() != big_n + 1 || out.g.len() != big_n {
        return Err(Error::invalid(format!(
            "smoother output covers {} steps, observations {big_n}",
            out.xs.len().saturating_sub(1)
        )));
    }
    if big_n == 0 {
        return Err(Error::invalid("no observations"));
    }
    Ok(big_n)
}

pub fn sufficient_stats(out: &SmootherOutput, y: &Mat) -> Result<SufficientStats> {
    let big_n = check_alignment(out, y)?;
    let d = out.xs[0].len();
    let n = y.ncols();
    let mut acc = Accumulator::new(d, n);
    for k in 1..=big_n {
        let cross = &out.ps[k] * out.g[k - 1].transpose();
        acc.add(&out.xs[k], &out.ps[k], &out.xs[k - 1], &out.ps[k - 1], &cross, &y.row(k - 1).transpose());
    }
    Ok(acc.finish(y))
}

struct Accumulator {
    lambda: Mat,
    upsilon: Mat,
    psi: Mat,
    xi: Mat,
}

impl Accumulator {
    fn new(d: usize, n: usize) -> Self {
        Self {
            lambda: Mat::zeros(d, d),
            upsilon: Mat::zeros(d, d),
            psi: Mat::zeros(d, d),
            xi: Mat::zeros(n, d),
        }
    }

    /// One `k` term: moments at `k` and `k−1`, `𝐏ˢ(k)𝐆(k−1)ᵀ` and `y(k)`.
    fn add(&mut self, x: &Vector, p: &Mat, x_prev: &Vector, p_prev: &Mat, cross: &Mat, y: &Vector) {
        self.lambda += p;
        self.lambda.ger(1.0, x, x, 1.0);
        self.upsilon += p_prev;
        self.upsilon.ger(1.0, x_prev, x_prev, 1.0);
        self.psi += cross;
        self.psi.ger(1.0, x, x_prev, 1.0);
        self.xi.ger(1.0, y, x, 1.0);
    }

    fn finish(self, y: &Mat) -> SufficientStats {
        let big_n = y.nrows();
        let scale = 1.0 / big_n as f64;
        SufficientStats {
            lambda: linalg::symmetrize(&(self.lambda * scale)),
            upsilon: linalg::symmetrize(&(self.upsilon * scale)),
            psi: self.psi * scale,
            xi: self.xi * scale,
            delta: linalg::symmetrize(&(y.transpose() * y * scale)),
            samples: big_n,
        }
    }
}

/// Byproducts of a streaming E step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStepSummary {
    pub log_likelihood: f64,
    pub jittered: bool,
    /// Smoothed neuronal means `x̂ˢ(k)` top block, `k = 1..N`, as `N × n` rows.
    pub smoothed_activity: Mat,
}

/// Runs the structured smoother and accumulates the statistics during the
/// backward pass without storing the smoothed covariances.
pub fn e_step(y: &Mat, sys: &ExtendedStateSystem) -> Result<(SufficientStats, EStepSummary)> {
    let f = forward(y, sys)?;
    let cmp = Companion::new(sys);
    let big_n = y.nrows();
    let (n, d) = (sys.n, sys.dim());
    let mut acc = Accumulator::new(d, n);
    let mut jittered = f.jittered;
    let mut activity = Mat::zeros(big_n, n);
    let mut xs_next = f.xf[big_n].clone();
    let mut ps_next = f.pf[big_n].clone();
    for k in (0..big_n).rev() {
        let (step, jit) = backward_step(&cmp, &f.xf[k], &f.pf[k], &xs_next, &ps_next)?;
        jittered |= jit;
        let cross = cmp.times_gain_t(&ps_next, &step.g_last);
        acc.add(&xs_next, &ps_next, &step.xs, &step.ps, &cross, &y.row(k).transpose());
        activity.set_row(k, &xs_next.rows(0, n).transpose());
        xs_next = step.xs;
        ps_next = step.ps;
    }
    Ok((
        acc.finish(y),
        EStepSummary {
            log_likelihood: f.log_likelihood,
            jittered,
            smoothed_activity: activity,
        },
    ))
}

fn check_stats(stats: &SufficientStats, eta: &EMParameters, basis: &HemoBasis) -> Result<()> {
    let n = eta.a.n();
    if stats.n() != n || stats.lambda.nrows() != n * basis.taps {
        return Err(Error::invalid("statistics do not match the model dimensions"));
    }
    Ok(())
}

/// Expected complete-data log-likelihood. The singular extended noise is
/// reduced to its leading `n × n` block; the shift rows carry no density.
pub fn q_function(stats: &SufficientStats, eta: &EMParameters, basis: &HemoBasis) -> Result<f64> {
    check_stats(stats, eta, basis)?;
    let n = eta.a.n() as f64;
    let big_n = stats.samples as f64;
    let phi = eta.a.discretize(basis.t_r)?.phi;
    let q = regularize(&process_noise_integral(&eta.a, eta.sigma, basis.t_r)?.q);
    let qinv = linalg::spd_inverse(&q)?;
    let ld = linalg::log_det_spd(&q)?;
    let lambda2 = eta.lambda * eta.lambda;
    let m = stats.transition_moment(&phi);
    let h = basis.response(&Vector::from_vec(eta.alpha.clone()));
    let rss = stats.observation_residual(&h);
    Ok(-0.5 * big_n * (n * (2.0 * PI).ln() + ld)
        - 0.5 * big_n * n * (2.0 * PI * lambda2).ln()
        - 0.5 * big_n * linalg::frob_dot(&qinv, &m)
        - 0.5 * big_n * rss / lambda2)
}

/// `ln p(A; Γ) + ln p(α)` with pruned entries dropped from the ARD prior.
pub fn log_prior(eta: &EMParameters, basis: &HemoBasis) -> f64 {
    let av = a_vec(eta.a.matrix());
    let mut lp = 0.0;
    for (k, a) in av.iter().enumerate() {
        if !eta.gamma.is_pruned(k) {
            let g = eta.gamma.gamma[k];
            lp -= 0.5 * ((2.0 * PI * g).ln() + a * a / g);
        }
    }
    for ((a, m), v) in eta.alpha.iter().zip(&basis.mu_alpha).zip(&basis.sigma_alpha) {
        lp -= 0.5 * ((2.0 * PI * v).ln() + (a - m) * (a - m) / v);
    }
    lp
}

/// The MAP-EM surrogate maximized by the M step.
pub fn penalized_surrogate(stats: &SufficientStats, eta: &EMParameters, basis: &HemoBasis) -> Result<f64> {
    Ok(q_function(stats, eta, basis)? + log_prior(eta, basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::system::{build_extended_system, tests::toy_basis};
    use crate::em::smoother::rts_smooth;
    use crate::sparse::GammaWeights;
    use crate::statespace::ConnectivityMatrix;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eta(n: usize, a: &[f64], sigma: f64, lambda: f64) -> EMParameters {
        EMParameters {
            a: ConnectivityMatrix::from_rows(n, a).unwrap(),
            alpha: vec![1.0, 0.0],
            sigma,
            lambda,
            gamma: GammaWeights::constant(n * n, 0.25),
        }
    }

    fn random_y(big_n: usize, n: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(big_n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn zero_output(xs: Vec<Vector>) -> SmootherOutput {
        let d = xs[0].len();
        let big_n = xs.len() - 1;
        SmootherOutput {
            ps: vec![Mat::zeros(d, d); big_n + 1],
            g: vec![Mat::zeros(d, d); big_n],
            pf: vec![Mat::zeros(d, d); big_n + 1],
            xs,
            log_likelihood: 0.0,
            jittered: false,
        }
    }

    #[test]
    fn constant_means_give_outer_product() {
        let c = Vector::from_vec(vec![0.5, -2.0]);
        let out = zero_output(vec![c.clone(); 5]);
        let st = sufficient_stats(&out, &Mat::zeros(4, 2)).unwrap();
        assert!((&st.lambda - &c * c.transpose()).abs().max() < 1e-15);
        assert!((&st.psi - &c * c.transpose()).abs().max() < 1e-15);
    }

    #[test]
    fn single_nonzero_row_delta() {
        let out = zero_output(vec![Vector::zeros(2); 5]);
        let mut y = Mat::zeros(4, 2);
        y.set_row(2, &nalgebra::RowDVector::from_vec(vec![3.0, -1.0]));
        let st = sufficient_stats(&out, &y).unwrap();
        assert_eq!(st.delta, Mat::from_row_slice(2, 2, &[9.0, -3.0, -3.0, 1.0]) / 4.0);
    }

    #[test]
    fn hand_summed_toy() {
        // d = 1, n = 1, N = 3
        let xs = [0.1, 0.4, -0.2, 0.3];
        let ps = [1.0, 0.5, 0.2, 0.3];
        let g = [0.7, -0.1, 0.2];
        let y = [1.0, -2.0, 0.5];
        let out = SmootherOutput {
            xs: xs.iter().map(|v| Vector::from_element(1, *v)).collect(),
            ps: ps.iter().map(|v| Mat::from_element(1, 1, *v)).collect(),
            g: g.iter().map(|v| Mat::from_element(1, 1, *v)).collect(),
            pf: vec![Mat::zeros(1, 1); 4],
            log_likelihood: 0.0,
            jittered: false,
        };
        let st = sufficient_stats(&out, &Mat::from_column_slice(3, 1, &y)).unwrap();
        let lambda = (0.5 + 0.16 + 0.2 + 0.04 + 0.3 + 0.09) / 3.0;
        let upsilon = (1.0 + 0.01 + 0.5 + 0.16 + 0.2 + 0.04) / 3.0;
        let psi = (0.5 * 0.7 + 0.04 + 0.2 * -0.1 - 0.08 + 0.3 * 0.2 - 0.06) / 3.0;
        let xi = (0.4 + 0.4 + 0.15) / 3.0;
        let delta = (1.0 + 4.0 + 0.25) / 3.0;
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(st.lambda[(0, 0)], lambda));
        assert!(close(st.upsilon[(0, 0)], upsilon));
        assert!(close(st.psi[(0, 0)], psi), "{} {psi}", st.psi[(0, 0)]);
        assert!(close(st.xi[(0, 0)], xi), "{} {xi}", st.xi[(0, 0)]);
        assert!(close(st.delta[(0, 0)], delta));
    }

    #[test]
    fn streaming_matches_materialized() {
        let basis = toy_basis(3);
        let e = eta(2, &[-0.6, 0.2, -0.1, -0.9], 0.3, 0.2);
        let sys = build_extended_system(&e, &basis).unwrap();
        let y = random_y(12, 2, 3);
        let full = sufficient_stats(&rts_smooth(&y, &sys).unwrap(), &y).unwrap();
        let (streamed, summary) = e_step(&y, &sys).unwrap();
        for (a, b) in [
            (&full.lambda, &streamed.lambda),
            (&full.upsilon, &streamed.upsilon),
            (&full.psi, &streamed.psi),
            (&full.xi, &streamed.xi),
            (&full.delta, &streamed.delta),
        ] {
            assert!((a - b).abs().max() < 1e-12);
        }
        assert_eq!(summary.smoothed_activity.nrows(), 12);
    }

    fn scalar_basis() -> HemoBasis {
        let mut b = toy_basis(1);
        b.h = Mat::from_row_slice(1, 2, &[0.8, 0.3]);
        b
    }

    #[test]
    fn scalar_q_function() {
        let basis = scalar_basis();
        let (a, sigma, lambda) = (-0.4, 0.2, 0.3);
        let st = SufficientStats {
            lambda: Mat::from_element(1, 1, 1.3),
            upsilon: Mat::from_element(1, 1, 1.1),
            psi: Mat::from_element(1, 1, 0.6),
            xi: Mat::from_element(1, 1, 0.9),
            delta: Mat::from_element(1, 1, 1.7),
            samples: 50,
        };
        let e = eta(1, &[a], sigma, lambda);
        let phi = (a * 2.0_f64).exp();
        let q = sigma * sigma * (phi * phi - 1.0) / (2.0 * a);
        let h = 0.8;
        let n = 50.0;
        let expected = -0.5 * n * (2.0 * PI * q).ln()
            - 0.5 * n * (2.0 * PI * lambda * lambda).ln()
            - 0.5 * n * (1.3 - 2.0 * 0.6 * phi + phi * phi * 1.1) / q
            - 0.5 * n * (1.7 - 2.0 * h * 0.9 + h * h * 1.3) / (lambda * lambda);
        let got = q_function(&st, &e, &basis).unwrap();
        assert!((got - expected).abs() < 1e-10 * expected.abs(), "{got} {expected}");
    }

    #[test]
    fn perfect_fit_leaves_log_determinants() {
        // Λ₀₀ = ΦΥ₀₀Φᵀ = Ψ₀₀Φᵀ and Δ = hΞ = h²Λ make both trace terms vanish
        let basis = scalar_basis();
        let e = eta(1, &[-0.4], 0.2, 0.3);
        let phi = (-0.8_f64).exp();
        let (u, h) = (2.0, 0.8);
        let l = phi * phi * u;
        let st = SufficientStats {
            lambda: Mat::from_element(1, 1, l),
            upsilon: Mat::from_element(1, 1, u),
            psi: Mat::from_element(1, 1, phi * u),
            xi: Mat::from_element(1, 1, h * l),
            delta: Mat::from_element(1, 1, h * h * l),
            samples: 10,
        };
        let q = process_noise_integral(&e.a, e.sigma, 2.0).unwrap().q[(0, 0)];
        let expected = -5.0 * (2.0 * PI * q).ln() - 5.0 * (2.0 * PI * 0.09).ln();
        let got = q_function(&st, &e, &basis).unwrap();
        assert!((got - expected).abs() < 1e-10 * expected.abs());
    }

    #[test]
    fn perturbing_a_lowers_q() {
        // statistics of a long noiseless-observation run from a known model
        let basis = toy_basis(2);
        let truth = eta(2, &[-0.5, 0.2, 0.0, -0.8], 0.3, 0.05);
        let sys = build_extended_system(&truth, &basis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let big_n = 2000;
        let chol = nalgebra::Cholesky::new(sys.q.clone()).unwrap();
        let mut x = Vector::zeros(2);
        let mut y = Mat::zeros(big_n, 2);
        for k in 0..big_n {
            let w = Vector::from_fn(2, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let xn = &sys.phi * &x + chol.l() * w;
            let xprev = std::mem::replace(&mut x, xn);
            let obs = &x * sys.h[0] + &xprev * sys.h[1];
            let e = Vector::from_fn(2, |_, _| 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal));
            y.set_row(k, &(obs + e).transpose());
        }
        let (st, _) = e_step(&y, &sys).unwrap();
        let base = q_function(&st, &truth, &basis).unwrap();
        for _ in 0..10 {
            let mut p = truth.clone();
            let mut m = p.a.matrix().clone();
            for v in m.iter_mut() {
                *v += rng.random_range(-0.15..0.15);
            }
            p.a = ConnectivityMatrix::new(m).unwrap();
            if !p.a.is_stable(1e-6) {
                continue;
            }
            assert!(q_function(&st, &p, &basis).unwrap() < base);
        }
    }

    #[test]
    fn prior_drops_pruned_entries() {
        let basis = toy_basis(2);
        let mut e = eta(1, &[-0.5], 0.1, 0.1);
        let full = log_prior(&e, &basis);
        e.gamma = GammaWeights::constant(1, 0.0);
        let alpha_only = log_prior(&e, &basis);
        assert!((full - alpha_only + 0.5 * ((2.0 * PI * 0.25).ln() + 1.0)).abs() < 1e-12);
    }
}

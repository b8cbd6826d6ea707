use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

use super::system::ExtendedStateSystem;

/// Smoothed moments for `k = 0..N`; `g[k]` is the backward gain `𝐆(k)` for `k = 0..N−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherOutput {
    pub xs: Vec<Vector>,
    pub ps: Vec<Mat>,
    pub g: Vec<Mat>,
    /// Filtered covariances `𝐏(k)`, `k = 0..N`.
    pub pf: Vec<Mat>,
    /// `ln p(Y)` accumulated from the innovations.
    pub log_likelihood: f64,
    /// Set when an innovation or prediction covariance needed diagonal jitter.
    pub jittered: bool,
}

fn check_observations(y: &Mat, n: usize) -> Result<()> {
    if y.ncols() != n || y.nrows() == 0 {
        return Err(Error::invalid(format!(
            "observations are {}x{}, expected N x {n}",
            y.nrows(),
            y.ncols()
        )));
    }
    if !linalg::all_finite(y) {
        return Err(Error::invalid("observations have non-finite entries"));
    }
    Ok(())
}

/// Forward Kalman recursion and backward RTS pass for a generic model
/// `x(k) = A x(k−1) + w`, `y(k) = C x(k) + e`, started at `N(x0, P0)`.
#[allow(clippy::too_many_arguments)]
pub fn rts_smooth_dense(y: &Mat, a: &Mat, c: &Mat, q: &Mat, r: &Mat, x0: &Vector, p0: &Mat) -> Result<SmootherOutput> {
    let d = a.nrows();
    let m = c.nrows();
    check_observations(y, m)?;
    let big_n = y.nrows();
    let mut xf = vec![x0.clone()];
    let mut pf = vec![p0.clone()];
    let mut log_likelihood = 0.0;
    let mut jittered = false;
    for k in 1..=big_n {
        let xm = a * &xf[k - 1];
        let pm = a * &pf[k - 1] * a.transpose() + q;
        let s = linalg::symmetrize(&(c * &pm * c.transpose() + r));
        let (chol, jit) = linalg::robust_cholesky(&s)?;
        jittered |= jit > 0.0;
        let v = y.row(k - 1).transpose() - c * &xm;
        let kt = chol.solve(&(c * &pm)); // S⁻¹ C P⁻ = Kᵀ
        xf.push(&xm + kt.transpose() * &v);
        pf.push(linalg::symmetrize(&(&pm - (c * &pm).transpose() * &kt)));
        let ld = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        log_likelihood -= 0.5 * (m as f64 * (2.0 * PI).ln() + ld + v.dot(&chol.solve(&v)));
    }

    let mut xs = xf.clone();
    let mut ps = pf.clone();
    let mut g = vec![Mat::zeros(d, d); big_n];
    for k in (0..big_n).rev() {
        let xm = a * &xf[k];
        let pm = linalg::symmetrize(&(a * &pf[k] * a.transpose() + q));
        let (chol, jit) = linalg::robust_cholesky(&pm)?;
        jittered |= jit > 0.0;
        let gk = chol.solve(&(a * &pf[k])).transpose();
        xs[k] = &xf[k] + &gk * (&xs[k + 1] - xm);
        ps[k] = linalg::symmetrize(&(&pf[k] + &gk * (&ps[k + 1] - pm) * gk.transpose()));
        g[k] = gk;
    }
    Ok(SmootherOutput { xs, ps, g, pf, log_likelihood, jittered })
}

/// Block operations for the companion structure of [`ExtendedStateSystem`].
pub(crate) struct Companion<'a> {
    sys: &'a ExtendedStateSystem,
    n: usize,
    ns: usize,
}

impl<'a> Companion<'a> {
    pub fn new(sys: &'a ExtendedStateSystem) -> Self {
        Self { sys, n: sys.n, ns: sys.dim() }
    }

    /// `𝐀 x`.
    pub fn predict_mean(&self, x: &Vector) -> Vector {
        let (n, ns) = (self.n, self.ns);
        let mut out = Vector::zeros(ns);
        out.rows_mut(0, n).copy_from(&(&self.sys.phi * x.rows(0, n)));
        out.rows_mut(n, ns - n).copy_from(&x.rows(0, ns - n));
        out
    }

    /// `𝐀 P 𝐀ᵀ + 𝐐`.
    pub fn predict_cov(&self, p: &Mat) -> Mat {
        let (n, ns) = (self.n, self.ns);
        let phi = &self.sys.phi;
        let top = phi * p.rows(0, n);
        let mut out = Mat::zeros(ns, ns);
        let head = top.columns(0, n) * phi.transpose() + &self.sys.q;
        out.view_mut((0, 0), (n, n)).copy_from(&linalg::symmetrize(&head));
        if ns > n {
            let side = top.columns(0, ns - n);
            out.view_mut((0, n), (n, ns - n)).copy_from(&side);
            out.view_mut((n, 0), (ns - n, n)).copy_from(&side.transpose());
            out.view_mut((n, n), (ns - n, ns - n)).copy_from(&p.view((0, 0), (ns - n, ns - n)));
        }
        out
    }

    /// `𝐂 v` for a vector.
    pub fn observe(&self, x: &Vector) -> Vector {
        let n = self.n;
        let mut out = Vector::zeros(n);
        for (j, hj) in self.sys.h.iter().enumerate() {
            out.axpy(*hj, &x.rows(j * n, n), 1.0);
        }
        out
    }

    /// `𝐂 P` (an `n × ns` matrix).
    pub fn observe_rows(&self, p: &Mat) -> Mat {
        let n = self.n;
        let mut out = Mat::zeros(n, p.ncols());
        for (j, hj) in self.sys.h.iter().enumerate() {
            if *hj != 0.0 {
                out += p.rows(j * n, n) * *hj;
            }
        }
        out
    }

    /// `U 𝐂ᵀ` for an `n × ns` matrix `U`.
    pub fn observe_cols(&self, u: &Mat) -> Mat {
        let n = self.n;
        let mut out = Mat::zeros(u.nrows(), n);
        for (j, hj) in self.sys.h.iter().enumerate() {
            if *hj != 0.0 {
                out += u.columns(j * n, n) * *hj;
            }
        }
        out
    }

    /// Last block row of `P 𝐀ᵀ`: `[P_{s−1,0} Φᵀ, P_{s−1,0}, …, P_{s−1,s−2}]`.
    fn last_row_times_at(&self, p: &Mat) -> Mat {
        let (n, ns) = (self.n, self.ns);
        let last = p.rows(ns - n, n);
        let mut out = Mat::zeros(n, ns);
        out.columns_mut(0, n).copy_from(&(last.columns(0, n) * self.sys.phi.transpose()));
        if ns > n {
            out.columns_mut(n, ns - n).copy_from(&last.columns(0, ns - n));
        }
        out
    }

    /// Full `𝐆` from its last block row; the other block rows shift the lags.
    pub fn expand_gain(&self, g_last: &Mat) -> Mat {
        let (n, ns) = (self.n, self.ns);
        let mut g = Mat::zeros(ns, ns);
        for i in 0..ns - n {
            g[(i, i + n)] = 1.0;
        }
        g.rows_mut(ns - n, n).copy_from(g_last);
        g
    }

    /// `𝐆 v` with the compact gain.
    fn gain_vec(&self, g_last: &Mat, v: &Vector) -> Vector {
        let (n, ns) = (self.n, self.ns);
        let mut out = Vector::zeros(ns);
        out.rows_mut(0, ns - n).copy_from(&v.rows(n, ns - n));
        out.rows_mut(ns - n, n).copy_from(&(g_last * v));
        out
    }

    /// `𝐆 D 𝐆ᵀ` with the compact gain.
    fn gain_congruence(&self, g_last: &Mat, d: &Mat) -> Mat {
        let (n, ns) = (self.n, self.ns);
        let mut out = Mat::zeros(ns, ns);
        let dg = d * g_last.transpose(); // ns × n
        if ns > n {
            out.view_mut((0, 0), (ns - n, ns - n)).copy_from(&d.view((n, n), (ns - n, ns - n)));
            let side = dg.rows(n, ns - n);
            out.view_mut((0, ns - n), (ns - n, n)).copy_from(&side);
            out.view_mut((ns - n, 0), (n, ns - n)).copy_from(&side.transpose());
        }
        out.view_mut((ns - n, ns - n), (n, n)).copy_from(&linalg::symmetrize(&(g_last * dg)));
        out
    }

    /// `P 𝐆ᵀ` with the compact gain.
    pub fn times_gain_t(&self, p: &Mat, g_last: &Mat) -> Mat {
        let (n, ns) = (self.n, self.ns);
        let mut out = Mat::zeros(p.nrows(), ns);
        if ns > n {
            out.columns_mut(0, ns - n).copy_from(&p.columns(n, ns - n));
        }
        out.columns_mut(ns - n, n).copy_from(&(p * g_last.transpose()));
        out
    }
}

pub(crate) struct Filtered {
    pub xf: Vec<Vector>,
    pub pf: Vec<Mat>,
    pub log_likelihood: f64,
    pub jittered: bool,
}

pub(crate) fn forward(y: &Mat, sys: &ExtendedStateSystem) -> Result<Filtered> {
    let n = sys.n;
    let ns = sys.dim();
    check_observations(y, n)?;
    if !(sys.lambda2 > 0.0) {
        return Err(Error::invalid("observation noise variance must be positive"));
    }
    let cmp = Companion::new(sys);
    let big_n = y.nrows();
    let mut xf = Vec::with_capacity(big_n + 1);
    let mut pf = Vec::with_capacity(big_n + 1);
    xf.push(Vector::zeros(ns));
    pf.push(Mat::identity(ns, ns));
    let mut log_likelihood = 0.0;
    let mut jittered = false;
    let r = sys.r();
    for k in 1..=big_n {
        let xm = cmp.predict_mean(&xf[k - 1]);
        let pm = cmp.predict_cov(&pf[k - 1]);
        let u = cmp.observe_rows(&pm);
        let s = linalg::symmetrize(&(cmp.observe_cols(&u) + &r));
        let (chol, jit) = linalg::robust_cholesky(&s)?;
        jittered |= jit > 0.0;
        let v = y.row(k - 1).transpose() - cmp.observe(&xm);
        let kt = chol.solve(&u);
        xf.push(&xm + kt.transpose() * &v);
        pf.push(linalg::symmetrize(&(&pm - u.transpose() * &kt)));
        let ld = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        log_likelihood -= 0.5 * (n as f64 * (2.0 * PI).ln() + ld + v.dot(&chol.solve(&v)));
    }
    Ok(Filtered { xf, pf, log_likelihood, jittered })
}

/// One backward step's output: smoothed moments at `k` and the compact gain `𝐆(k)`.
pub(crate) struct BackwardStep {
    pub xs: Vector,
    pub ps: Mat,
    pub g_last: Mat,
}

pub(crate) fn backward_step(
    cmp: &Companion<'_>,
    xf: &Vector,
    pf: &Mat,
    xs_next: &Vector,
    ps_next: &Mat,
) -> Result<(BackwardStep, bool)> {
    let xm = cmp.predict_mean(xf);
    let pm = cmp.predict_cov(pf);
    let (chol, jit) = linalg::robust_cholesky(&pm)?;
    let g_last = chol.solve(&cmp.last_row_times_at(pf).transpose()).transpose();
    let xs = xf + cmp.gain_vec(&g_last, &(xs_next - xm));
    let ps = linalg::symmetrize(&(pf + cmp.gain_congruence(&g_last, &(ps_next - pm))));
    Ok((BackwardStep { xs, ps, g_last }, jit > 0.0))
}

/// RTS smoother specialised to the companion system, with the prior
/// `x̂(0) = 0`, `𝐏(0) = I`.
pub fn rts_smooth(y: &Mat, sys: &ExtendedStateSystem) -> Result<SmootherOutput> {
    let f = forward(y, sys)?;
    let cmp = Companion::new(sys);
    let big_n = y.nrows();
    let mut jittered = f.jittered;
    let mut xs = f.xf.clone();
    let mut ps = f.pf.clone();
    let mut g = vec![Mat::zeros(0, 0); big_n];
    for k in (0..big_n).rev() {
        let (step, jit) = backward_step(&cmp, &f.xf[k], &f.pf[k], &xs[k + 1], &ps[k + 1])?;
        jittered |= jit;
        xs[k] = step.xs;
        ps[k] = step.ps;
        g[k] = cmp.expand_gain(&step.g_last);
    }
    Ok(SmootherOutput {
        xs,
        ps,
        g,
        pf: f.pf,
        log_likelihood: f.log_likelihood,
        jittered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::system::{build_extended_system, tests::toy_basis, EMParameters};
    use crate::sparse::GammaWeights;
    use crate::statespace::ConnectivityMatrix;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(seed: u64) -> ExtendedStateSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = [
            -0.6 + rng.random_range(-0.1..0.1),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            -0.9 + rng.random_range(-0.1..0.1),
        ];
        let eta = EMParameters {
            a: ConnectivityMatrix::from_rows(2, &a).unwrap(),
            alpha: vec![1.0, rng.random_range(-1.0..1.0)],
            sigma: 0.4,
            lambda: 0.3,
            gamma: GammaWeights::constant(4, 0.25),
        };
        build_extended_system(&eta, &toy_basis(3)).unwrap()
    }

    fn random_y(big_n: usize, n: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(big_n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_observations_give_zero_means() {
        let sys = system(1);
        let out = rts_smooth(&Mat::zeros(8, 2), &sys).unwrap();
        assert!(out.xs.iter().all(|x| x.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn structured_matches_dense() {
        for seed in 0..5 {
            let sys = system(seed);
            let y = random_y(15, 2, 100 + seed);
            let d = sys.dim();
            let fast = rts_smooth(&y, &sys).unwrap();
            let dense = rts_smooth_dense(
                &y,
                &sys.abold(),
                &sys.cbold(),
                &sys.qbold(),
                &sys.r(),
                &Vector::zeros(d),
                &Mat::identity(d, d),
            )
            .unwrap();
            for k in 0..=15 {
                assert!((&fast.xs[k] - &dense.xs[k]).amax() < 1e-10);
                assert!((&fast.ps[k] - &dense.ps[k]).amax() < 1e-10);
            }
            for k in 0..15 {
                assert!((&fast.g[k] - &dense.g[k]).amax() < 1e-8, "{}", &fast.g[k] - &dense.g[k]);
            }
            assert!((fast.log_likelihood - dense.log_likelihood).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothed_covariance_below_filtered() {
        let sys = system(7);
        let out = rts_smooth(&random_y(20, 2, 8), &sys).unwrap();
        for (p, ps) in out.pf.iter().zip(&out.ps) {
            assert!((ps - ps.transpose()).amax() < 1e-10);
            assert!(linalg::sym_eigenvalues(ps).min() > -1e-10);
            assert!(linalg::sym_eigenvalues(&(p - ps)).min() > -1e-8);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(rts_smooth(&Mat::zeros(4, 3), &system(0)).is_err());
        let mut y = Mat::zeros(4, 2);
        y[(1, 1)] = f64::NAN;
        assert!(rts_smooth(&y, &system(0)).is_err());
    }
}

#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_ec::em::ExtendedStateSystem;
use sparse_ec::linalg::{Mat, Vector};
use sparse_ec::statespace::{process_noise_integral, ConnectivityMatrix};

/// Exact posterior of the stacked states `[x(0); …; x(N)]` given all
/// observations, by one dense Gaussian conditioning.
pub struct JointPosterior {
    pub mean: Vector,
    pub cov: Mat,
    pub d: usize,
    pub log_likelihood: f64,
}

impl JointPosterior {
    pub fn mean_at(&self, k: usize) -> Vector {
        self.mean.rows(k * self.d, self.d).into_owned()
    }

    pub fn cov_block(&self, i: usize, j: usize) -> Mat {
        self.cov.view((i * self.d, j * self.d), (self.d, self.d)).into_owned()
    }
}

pub fn brute_force(y: &Mat, a: &Mat, c: &Mat, q: &Mat, r: &Mat, p0: &Mat) -> JointPosterior {
    let d = a.nrows();
    let m = c.nrows();
    let big_n = y.nrows();
    let dim = d * (big_n + 1);
    // X = M [x(0); w(1); …; w(N)]
    let mut mm = Mat::zeros(dim, dim);
    let mut powers = vec![Mat::identity(d, d)];
    for k in 1..=big_n {
        let next = a * &powers[k - 1];
        powers.push(next);
    }
    for k in 0..=big_n {
        for j in 0..=k {
            mm.view_mut((k * d, j * d), (d, d)).copy_from(&powers[k - j]);
        }
    }
    let mut dd = Mat::zeros(dim, dim);
    dd.view_mut((0, 0), (d, d)).copy_from(p0);
    for k in 1..=big_n {
        dd.view_mut((k * d, k * d), (d, d)).copy_from(q);
    }
    let prior = &mm * dd * mm.transpose();
    let mut obs = Mat::zeros(big_n * m, dim);
    let mut noise = Mat::zeros(big_n * m, big_n * m);
    let mut yv = Vector::zeros(big_n * m);
    for k in 1..=big_n {
        obs.view_mut(((k - 1) * m, k * d), (m, d)).copy_from(c);
        noise.view_mut(((k - 1) * m, (k - 1) * m), (m, m)).copy_from(r);
        for i in 0..m {
            yv[(k - 1) * m + i] = y[(k - 1, i)];
        }
    }
    let s = &obs * &prior * obs.transpose() + noise;
    let chol = s.clone().cholesky().expect("innovation covariance");
    let pc = &prior * obs.transpose();
    let mean = &pc * chol.solve(&yv);
    let cov = &prior - &pc * chol.solve(&pc.transpose());
    let ld = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_likelihood =
        -0.5 * ((big_n * m) as f64 * (2.0 * std::f64::consts::PI).ln() + ld + yv.dot(&chol.solve(&yv)));
    JointPosterior { mean, cov, d, log_likelihood }
}

pub fn brute_force_system(y: &Mat, sys: &ExtendedStateSystem) -> JointPosterior {
    let d = sys.dim();
    brute_force(y, &sys.abold(), &sys.cbold(), &sys.qbold(), &sys.r(), &Mat::identity(d, d))
}

/// Random stable companion system and observations with `N·ns ≤ 30`.
pub fn random_companion(seed: u64) -> (ExtendedStateSystem, Mat) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let s = rng.random_range(1..=3usize);
    let max_n = (30 / (n * s)).max(2);
    let big_n = rng.random_range(2..=max_n);
    let mut a = Mat::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3));
    for i in 0..n {
        a[(i, i)] = -rng.random_range(0.4..1.2);
    }
    let a = ConnectivityMatrix::new(a).unwrap();
    let a = if a.is_stable(1e-3) { a } else { ConnectivityMatrix::new(-Mat::identity(n, n)).unwrap() };
    let t_r = rng.random_range(0.5..2.5);
    let sigma = rng.random_range(0.1..1.0);
    let sys = ExtendedStateSystem {
        phi: a.discretize(t_r).unwrap().phi,
        h: Vector::from_fn(s, |_, _| rng.random_range(-1.0..1.0)),
        q: process_noise_integral(&a, sigma, t_r).unwrap().q,
        lambda2: rng.random_range(0.05..0.5_f64).powi(2),
        n,
        s,
        t_r,
    };
    let y = Mat::from_fn(big_n, n, |_, _| rng.random_range(-1.0..1.0));
    (sys, y)
}

/// Largest deviation between the RTS output and the joint posterior over
/// means, marginal covariances and lag-one cross covariances.
pub fn smoother_deviation(y: &Mat, sys: &ExtendedStateSystem) -> (f64, f64) {
    let out = sparse_ec::em::rts_smooth(y, sys).unwrap();
    let jp = brute_force_system(y, sys);
    let mut mean_dev = 0.0_f64;
    let mut cov_dev = 0.0_f64;
    for k in 0..=y.nrows() {
        mean_dev = mean_dev.max((&out.xs[k] - jp.mean_at(k)).amax());
        cov_dev = cov_dev.max((&out.ps[k] - jp.cov_block(k, k)).amax());
        if k > 0 {
            let cross = &out.ps[k] * out.g[k - 1].transpose();
            cov_dev = cov_dev.max((cross - jp.cov_block(k, k - 1)).amax());
        }
    }
    (mean_dev, cov_dev)
}

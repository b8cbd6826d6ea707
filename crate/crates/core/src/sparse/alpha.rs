use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hemodynamics::HemoBasis;
use crate::linalg::{self, Mat, Vector};

const LS_RIDGE: f64 = 1e-10;
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: Vec<f64>,
    pub lambda2: f64,
    /// Set when the least-squares step needed a ridge to be solvable.
    pub regularized: bool,
}

/// Extended state `𝐱(k) = [x(k); x(k−1); …; x(k−s+1)]`, zero before the first sample.
pub fn extended_state(series: &Mat, k: usize, s: usize) -> Vector {
    let n = series.ncols();
    let mut out = Vector::zeros(n * s);
    for j in 0..s.min(k + 1) {
        for r in 0..n {
            out[j * n + r] = series[(k - j, r)];
        }
    }
    out
}

/// `φ(k)` with `vec(φ(k)) = 𝐱(k)`: an `n × s` matrix whose column `j` is `x(k−j)`.
pub fn phi_of(state: &Vector, n: usize) -> Mat {
    linalg::unvec_cols(state, n, state.len() / n)
}

/// Stacked regressors `𝐇 = [φ(1)H; …; φ(N)H]`, `Nn × (p+1)`.
pub fn design_matrix(series: &Mat, h: &Mat) -> Mat {
    let (big_n, n) = series.shape();
    let s = h.nrows();
    let k_cols = h.ncols();
    let mut out = Mat::zeros(big_n * n, k_cols);
    for k in 0..big_n {
        for j in 0..s.min(k + 1) {
            for r in 0..n {
                let x = series[(k - j, r)];
                if x != 0.0 {
                    for c in 0..k_cols {
                        out[(k * n + r, c)] += x * h[(j, c)];
                    }
                }
            }
        }
    }
    out
}

/// `Y = [y(1); …; y(N)]` as one `Nn` vector.
pub fn stack_rows(y: &Mat) -> Vector {
    linalg::vec_cols(&y.transpose())
}

fn well_conditioned_solve(m: &Mat, rhs: &Vector) -> (Vector, bool) {
    let eig = linalg::sym_eigenvalues(m);
    let (lo, hi) = (eig.min(), eig.max());
    let singular = !(lo > 0.0) || hi / lo > MAX_CONDITION;
    let k = m.nrows();
    let scale = (m.trace() / k as f64).abs().max(f64::MIN_POSITIVE);
    let sys = if singular { m + Mat::identity(k, k) * (LS_RIDGE * scale) } else { m.clone() };
    match sys.clone().cholesky() {
        Some(c) => (c.solve(rhs), singular),
        None => {
            let shifted = sys + Mat::identity(k, k) * (LS_RIDGE * scale);
            let c = shifted.cholesky().expect("ridge-shifted Gram matrix is positive definite");
            (c.solve(rhs), true)
        }
    }
}

/// MAP estimate of the hemodynamic coefficients from measured `(x, y)` pairs,
/// with the observation variance set from the least-squares residual.
pub fn estimate_alpha(series: &Mat, y: &Mat, basis: &HemoBasis) -> Result<AlphaEstimate> {
    basis.validate()?;
    let (big_n, n) = series.shape();
    let k = basis.pcs + 1;
    if y.shape() != (big_n, n) {
        return Err(Error::invalid(format!(
            "x is {:?} but y is {:?}",
            series.shape(),
            y.shape()
        )));
    }
    if big_n * n <= k {
        return Err(Error::invalid(format!(
            "need N·n > p+1, got N·n = {} and p+1 = {k}",
            big_n * n
        )));
    }
    if !linalg::all_finite(series) || !linalg::all_finite(y) {
        return Err(Error::invalid("series have non-finite entries"));
    }
    let hh = design_matrix(series, &basis.h);
    let yv = stack_rows(y);
    let gram = linalg::symmetrize(&(hh.transpose() * &hh));
    let (alpha_ls, regularized) = well_conditioned_solve(&gram, &(hh.transpose() * &yv));
    let resid = &yv - &hh * &alpha_ls;
    let lambda2 = resid.norm_squared() / (big_n * n - k) as f64;

    let mu = basis.mu();
    let sigma_inv = Mat::from_diagonal(&Vector::from_iterator(k, basis.sigma_alpha.iter().map(|v| 1.0 / v)));
    let normal = &gram + sigma_inv * lambda2;
    let (chol, _) = linalg::robust_cholesky(&normal)?;
    let alpha = &mu + chol.solve(&(hh.transpose() * (&yv - &hh * &mu)));
    Ok(AlphaEstimate {
        alpha: alpha.iter().copied().collect(),
        lambda2,
        regularized,
    })
}

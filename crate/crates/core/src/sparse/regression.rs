use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Regression form of the sampled neuronal model `X₊ = X e^{AᵀT_R} + W`
/// together with its first-order surrogate `vec(ΔX) = Φ vec(Aᵀ) + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub xplus: Mat,
    pub x: Mat,
    pub delta: Mat,
    /// `(I ⊗ X) T_R`, `n(N−1) × n²`.
    pub phi: Mat,
    pub xvec: linalg::Vector,
    pub t_r: f64,
}

impl RegressionData {
    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    /// Number of samples `N` the data matrices were built from.
    pub fn samples(&self) -> usize {
        self.x.nrows() + 1
    }

    pub fn stats(&self) -> TransitionStats {
        TransitionStats::from_series(&self.xplus, &self.x)
    }
}

/// Builds `X₊`, `X`, `ΔX` and `Φ` from an `N × n` series (one row per sample).
pub fn build_regression(series: &Mat, t_r: f64) -> Result<RegressionData> {
    let big_n = series.nrows();
    let n = series.ncols();
    if big_n < 3 {
        return Err(Error::invalid(format!("need at least 3 samples, got {big_n}")));
    }
    if n == 0 || !linalg::all_finite(series) {
        return Err(Error::invalid("series must have finite entries and at least one region"));
    }
    if !(t_r > 0.0) || !t_r.is_finite() {
        return Err(Error::invalid(format!("sampling interval must be > 0, got {t_r}")));
    }
    let xplus = series.rows(1, big_n - 1).into_owned();
    let x = series.rows(0, big_n - 1).into_owned();
    let delta = &xplus - &x;
    let phi = linalg::kron(&Mat::identity(n, n), &x) * t_r;
    let xvec = linalg::vec_cols(&delta);
    Ok(RegressionData { xplus, x, delta, phi, xvec, t_r })
}

/// Second moments that the transition objective depends on:
/// `X₊ᵀX₊`, `XᵀX₊` and `XᵀX`, plus the sample count `N` they stand for.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionStats {
    pub spp: Mat,
    pub sxp: Mat,
    pub sxx: Mat,
    pub samples: f64,
}

impl TransitionStats {
    pub fn from_series(xplus: &Mat, x: &Mat) -> Self {
        Self {
            spp: linalg::symmetrize(&(xplus.transpose() * xplus)),
            sxp: x.transpose() * xplus,
            sxx: linalg::symmetrize(&(x.transpose() * x)),
            samples: (x.nrows() + 1) as f64,
        }
    }

    pub fn n(&self) -> usize {
        self.sxx.nrows()
    }

    /// `(X₊ − XE)ᵀ(X₊ − XE)` for a given transition `E = e^{AᵀT_R}`.
    pub fn residual_moment(&self, e: &Mat) -> Mat {
        let cross = self.sxp.transpose() * e;
        linalg::symmetrize(&(&self.spp - &cross - cross.transpose() + e.transpose() * &self.sxx * e))
    }
}

/// `a = vec(Aᵀ)`, i.e. the entries of `A` in row-major order.
pub fn a_vec(a: &Mat) -> linalg::Vector {
    linalg::vec_cols(&a.transpose())
}

pub fn a_from_vec(a: &linalg::Vector, n: usize) -> Mat {
    linalg::unvec_cols(a, n, n).transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_hand_construction() {
        let s = Mat::from_column_slice(3, 1, &[1.0, 2.0, 4.0]);
        let d = build_regression(&s, 2.0).unwrap();
        assert_eq!(d.xplus.as_slice(), &[2.0, 4.0]);
        assert_eq!(d.x.as_slice(), &[1.0, 2.0]);
        assert_eq!(d.delta.as_slice(), &[1.0, 2.0]);
        assert_eq!(d.phi.as_slice(), &[2.0, 4.0]);
        assert_eq!(d.samples(), 3);
    }

    #[test]
    fn vectorization_matches_linear_model() {
        let x = Mat::from_fn(6, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let a = Mat::from_fn(3, 3, |i, j| 0.1 * i as f64 - 0.2 * j as f64);
        let t_r = 2.0;
        // make ΔX = X Aᵀ T_R hold exactly
        let mut series = Mat::zeros(7, 3);
        series.rows_mut(0, 6).copy_from(&x);
        let d0 = build_regression(&series, t_r).unwrap();
        let delta = &d0.x * a.transpose() * t_r;
        let lhs = linalg::vec_cols(&delta);
        let rhs = &d0.phi * a_vec(&a);
        assert!((lhs - rhs).amax() < 1e-12);
        assert_eq!(d0.phi.ncols(), 9);
        assert_eq!(d0.phi.nrows(), 18);
    }

    #[test]
    fn a_vec_is_row_major() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a_vec(&a).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a_from_vec(&a_vec(&a), 2), a);
    }

    #[test]
    fn too_short_series_rejected() {
        assert!(build_regression(&Mat::zeros(2, 2), 2.0).is_err());
    }

    #[test]
    fn residual_moment_matches_direct() {
        let s = Mat::from_fn(9, 2, |i, j| ((i + 2 * j) as f64).cos());
        let d = build_regression(&s, 2.0).unwrap();
        let e = Mat::from_row_slice(2, 2, &[0.4, 0.1, -0.2, 0.3]);
        let r = &d.xplus - &d.x * &e;
        let direct = r.transpose() * &r;
        assert!((d.stats().residual_moment(&e) - direct).amax() < 1e-12);
    }
}

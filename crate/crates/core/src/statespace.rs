//! Continuous-to-discrete conversion of the linear neuronal model
//! `dx = A x dt + σ dW`, sampled every `T_R` seconds.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_square, expm, symmetrize, Mat};

/// Default margin for the stability test `max Re λ(A) < −ε`.
pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-6;

/// Condition number above which a noise covariance is regularized before inversion.
const MAX_CONDITION: f64 = 1e12;
const REGULARIZATION: f64 = 1e-12;

/// Continuous-time coupling matrix between regions (units 1/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "crate::io::RowMatrix", into = "crate::io::RowMatrix")]
pub struct ConnectivityMatrix(Mat);

impl ConnectivityMatrix {
    pub fn new(entries: Mat) -> Result<Self> {
        check_square(&entries, "connectivity matrix")?;
        Ok(Self(entries))
    }

    pub fn from_rows(n: usize, rows: &[f64]) -> Result<Self> {
        if rows.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                rows.len()
            )));
        }
        Self::new(Mat::from_row_slice(n, n, rows))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_matrix(self) -> Mat {
        self.0
    }

    pub fn is_stable(&self, eps: f64) -> bool {
        max_real_eigenvalue(&self.0) < -eps
    }

    pub fn discretize(&self, t_r: f64) -> Result<DiscreteTransition> {
        Ok(DiscreteTransition {
            phi: linalg::mat_exp(&self.0, t_r)?,
            t_r,
        })
    }
}

impl TryFrom<crate::io::RowMatrix> for ConnectivityMatrix {
    type Error = Error;

    fn try_from(rows: crate::io::RowMatrix) -> Result<Self> {
        Self::new(rows.into_matrix()?)
    }
}

impl From<ConnectivityMatrix> for crate::io::RowMatrix {
    fn from(a: ConnectivityMatrix) -> Self {
        crate::io::RowMatrix::from_matrix(&a.0)
    }
}

/// One-step transition `Φ = e^{A T_R}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTransition {
    pub phi: Mat,
    pub t_r: f64,
}

impl DiscreteTransition {
    pub fn spectral_radius(&self) -> f64 {
        self.phi
            .complex_eigenvalues()
            .iter()
            .fold(0.0_f64, |acc, z| acc.max(z.norm()))
    }
}

/// Process-noise covariance of the sampled model together with the noise
/// intensity it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessNoiseCov {
    pub q: Mat,
    pub sigma: f64,
}

/// Largest real part among the eigenvalues of `a`.
pub fn max_real_eigenvalue(a: &Mat) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |acc, z| acc.max(z.re))
}

/// `true` iff every eigenvalue of `a` has real part strictly below `−eps`.
pub fn is_stable(a: &Mat, eps: f64) -> Result<bool> {
    check_square(a, "matrix")?;
    Ok(max_real_eigenvalue(a) < -eps)
}

/// Van Loan block exponential `exp([[−A, I], [0, Aᵀ]] T_R)`.
fn van_loan_block(a: &Mat, t_r: f64) -> Mat {
    let n = a.nrows();
    let mut m = Mat::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-a));
    m.view_mut((0, n), (n, n)).fill_with_identity();
    m.view_mut((n, n), (n, n)).copy_from(&a.transpose());
    expm(&(m * t_r))
}

/// Unit-intensity noise shape `∫₀^{T_R} e^{Aτ} e^{Aᵀτ} dτ`.
pub fn noise_shape(a: &Mat, t_r: f64) -> Mat {
    let n = a.nrows();
    let f = van_loan_block(a, t_r);
    let f12 = f.view((0, n), (n, n));
    let f22 = f.view((n, n), (n, n));
    symmetrize(&(f22.transpose() * f12))
}

/// Gradient with respect to `A` of `⟨G, noise_shape(A, T_R)⟩`.
///
/// Differentiates through the Van Loan block exponential using the adjoint
/// Fréchet derivative.
pub fn noise_shape_gradient(a: &Mat, t_r: f64, g: &Mat) -> Mat {
    let n = a.nrows();
    let mut m = Mat::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-a));
    m.view_mut((0, n), (n, n)).fill_with_identity();
    m.view_mut((n, n), (n, n)).copy_from(&a.transpose());
    let m = m * t_r;
    let f = expm(&m);
    let f12 = f.view((0, n), (n, n)).into_owned();
    let f22 = f.view((n, n), (n, n)).into_owned();
    // Qs = F22ᵀ F12, so ⟨G, dQs⟩ = ⟨F22 G, dF12⟩ + ⟨F12 Gᵀ, dF22⟩.
    let mut gf = Mat::zeros(2 * n, 2 * n);
    gf.view_mut((0, n), (n, n)).copy_from(&(&f22 * g));
    gf.view_mut((n, n), (n, n)).copy_from(&(&f12 * g.transpose()));
    let gm = linalg::exp_frechet_adjoint(&m, &gf);
    // dM = T_R [[−dA, 0], [0, dAᵀ]]
    let g11 = gm.view((0, 0), (n, n));
    let g22 = gm.view((n, n), (n, n));
    (g22.transpose() - g11) * t_r
}

/// `Q = σ² ∫₀^{T_R} e^{Aτ} e^{Aᵀτ} dτ`, computed with the Van Loan construction.
pub fn process_noise_integral(a: &ConnectivityMatrix, sigma: f64, t_r: f64) -> Result<ProcessNoiseCov> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if !(t_r > 0.0) || !t_r.is_finite() {
        return Err(Error::invalid(format!("sampling interval must be > 0, got {t_r}")));
    }
    Ok(ProcessNoiseCov {
        q: noise_shape(a.matrix(), t_r) * (sigma * sigma),
        sigma,
    })
}

/// Inverse of a noise covariance, adding `1e-12·I` first when the matrix is
/// ill-conditioned (condition number above 1e12) or not positive definite.
pub fn regularized_inverse(q: &Mat) -> Result<Mat> {
    linalg::spd_inverse(&regularize(q))
}

pub(crate) fn regularize(q: &Mat) -> Mat {
    let q = symmetrize(q);
    let eig = SymmetricEigen::new(q.clone()).eigenvalues;
    let lo = eig.min();
    let hi = eig.max();
    if lo <= 0.0 || hi / lo > MAX_CONDITION {
        let n = q.nrows();
        q + Mat::identity(n, n) * REGULARIZATION
    } else {
        q
    }
}

/// `tr[(X₊ − X e^{AᵀT_R}) Q⁻¹ (X₊ − X e^{AᵀT_R})ᵀ]`.
pub fn weighted_residual_norm(
    xplus: &Mat,
    x: &Mat,
    a: &ConnectivityMatrix,
    q: &ProcessNoiseCov,
    t_r: f64,
) -> Result<f64> {
    let n = a.n();
    if xplus.shape() != x.shape() || x.ncols() != n || q.q.shape() != (n, n) {
        return Err(Error::invalid(format!(
            "dimension mismatch: X₊ {:?}, X {:?}, A {n}x{n}, Q {:?}",
            xplus.shape(),
            x.shape(),
            q.q.shape()
        )));
    }
    let e = linalg::mat_exp(&a.matrix().transpose(), t_r)?;
    let r = xplus - x * e;
    let qinv = regularized_inverse(&q.q)?;
    Ok(linalg::frob_dot(&(&r * qinv), &r).max(0.0))
}

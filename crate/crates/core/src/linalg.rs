//! Dense linear-algebra helpers shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub(crate) fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub(crate) fn check_square(m: &Mat, what: &str) -> Result<usize> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !all_finite(m) {
        return Err(Error::invalid(format!("{what} has non-finite entries")));
    }
    Ok(m.nrows())
}

/// Matrix exponential `e^{A t}` by Padé scaling-and-squaring.
pub fn mat_exp(a: &Mat, t: f64) -> Result<Mat> {
    check_square(a, "exponent matrix")?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("time must be finite and >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(Mat::identity(a.nrows(), a.nrows()));
    }
    Ok(expm(&(a * t)))
}

/// Unchecked exponential of an already-scaled matrix.
pub(crate) fn expm(m: &Mat) -> Mat {
    m.clone().exp()
}

/// Returns `(e^M, L(M, E))` where `L` is the Fréchet derivative of the
/// exponential at `M` in direction `E`, read from the block exponential
/// `exp([[M, E], [0, M]])`.
pub fn exp_frechet(m: &Mat, e: &Mat) -> (Mat, Mat) {
    let n = m.nrows();
    let mut big = Mat::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(m);
    big.view_mut((0, n), (n, n)).copy_from(e);
    big.view_mut((n, n), (n, n)).copy_from(m);
    let f = expm(&big);
    (
        f.view((0, 0), (n, n)).into_owned(),
        f.view((0, n), (n, n)).into_owned(),
    )
}

/// Adjoint of the Fréchet derivative: `⟨G, L(M, E)⟩ = ⟨L(Mᵀ, G), E⟩`.
pub fn exp_frechet_adjoint(m: &Mat, g: &Mat) -> Mat {
    exp_frechet(&m.transpose(), g).1
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Column-stacking vectorization.
pub fn vec_cols(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

pub fn unvec_cols(v: &Vector, nrows: usize, ncols: usize) -> Mat {
    Mat::from_column_slice(nrows, ncols, v.as_slice())
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn sym_eigenvalues(m: &Mat) -> Vector {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

/// Cholesky of a symmetric positive (semi)definite matrix. Adds a small
/// diagonal jitter, growing geometrically, until the factorization succeeds.
/// Returns the factor and the jitter that was needed.
pub fn robust_cholesky(m: &Mat) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let sym = symmetrize(m);
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok((c, 0.0));
    }
    let n = sym.nrows().max(1);
    let scale = (sym.trace().abs() / n as f64).max(f64::MIN_POSITIVE);
    let mut jitter = 1e-12 * scale;
    for _ in 0..30 {
        let shifted = &sym + Mat::identity(n, n) * jitter;
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(
        "matrix is not positive definite even after jitter".into(),
    ))
}

pub fn spd_inverse(m: &Mat) -> Result<Mat> {
    Ok(robust_cholesky(m)?.0.inverse())
}

pub fn log_det_spd(m: &Mat) -> Result<f64> {
    let (c, _) = robust_cholesky(m)?;
    Ok(2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Frobenius inner product `tr(Aᵀ B)`.
pub fn frob_dot(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_is_identity() {
        let e = mat_exp(&Mat::zeros(3, 3), 2.0).unwrap();
        assert_eq!(e, Mat::identity(3, 3));
    }

    #[test]
    fn diagonal_exponential_matches_scalar() {
        let a = Mat::from_diagonal_element(2, 2, -0.5);
        let e = mat_exp(&a, 2.0).unwrap();
        let expected = (-1.0_f64).exp();
        assert!((e[(0, 0)] - expected).abs() < 1e-15);
        assert!((e[(1, 1)] - expected).abs() < 1e-15);
        assert!(e[(0, 1)].abs() < 1e-16);
        assert!((expected - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(mat_exp(&Mat::zeros(2, 3), 1.0).is_err());
        let mut a = Mat::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(mat_exp(&a, 1.0).is_err());
        assert!(mat_exp(&Mat::zeros(2, 2), -1.0).is_err());
    }

    #[test]
    fn frechet_matches_finite_difference() {
        let m = Mat::from_row_slice(3, 3, &[-1.0, 0.3, 0.0, 0.2, -0.7, 0.4, 0.0, -0.5, -1.2]);
        let e = Mat::from_row_slice(3, 3, &[0.1, -0.2, 0.3, 0.0, 0.5, -0.1, 0.2, 0.0, 0.4]);
        let (_, l) = exp_frechet(&m, &e);
        let h = 1e-6;
        let fd = (expm(&(&m + &e * h)) - expm(&(&m - &e * h))) / (2.0 * h);
        assert!(max_abs(&(l - fd)) < 1e-8);
    }

    #[test]
    fn frechet_adjoint_identity() {
        let m = Mat::from_row_slice(2, 2, &[-0.4, 1.1, -0.3, -0.9]);
        let e = Mat::from_row_slice(2, 2, &[0.7, -0.2, 0.5, 0.1]);
        let g = Mat::from_row_slice(2, 2, &[-1.0, 0.4, 0.3, 2.0]);
        let lhs = frob_dot(&g, &exp_frechet(&m, &e).1);
        let rhs = frob_dot(&exp_frechet_adjoint(&m, &g), &e);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn vec_roundtrip_and_kron_identity() {
        // vec(A X B) = (Bᵀ ⊗ A) vec(X)
        let a = Mat::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0]);
        let x = Mat::from_row_slice(3, 2, &[0.2, -0.4, 1.0, 0.0, 0.3, 0.9]);
        let b = Mat::from_row_slice(2, 2, &[1.5, -0.5, 0.25, 2.0]);
        let lhs = vec_cols(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec_cols(&x);
        assert!((lhs - rhs).amax() < 1e-14);
        assert_eq!(unvec_cols(&vec_cols(&x), 3, 2), x);
    }

    #[test]
    fn cholesky_jitter_handles_psd() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, jitter) = robust_cholesky(&m).unwrap();
        assert!(jitter > 0.0);
    }
}

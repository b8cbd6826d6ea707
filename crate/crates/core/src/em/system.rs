use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hemodynamics::HemoBasis;
use crate::linalg::{self, Mat, Vector};
use crate::sparse::GammaWeights;
use crate::statespace::{process_noise_integral, ConnectivityMatrix, DEFAULT_STABILITY_MARGIN};

/// Parameters `η = {A, α, σ, λ}` together with the current ARD weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EMParameters {
    pub a: ConnectivityMatrix,
    pub alpha: Vec<f64>,
    pub sigma: f64,
    pub lambda: f64,
    pub gamma: GammaWeights,
}

impl EMParameters {
    pub fn validate(&self, basis: &HemoBasis) -> Result<()> {
        let n = self.a.n();
        if self.alpha.len() != basis.pcs + 1 {
            return Err(Error::invalid(format!(
                "alpha has {} entries, basis expects {}",
                self.alpha.len(),
                basis.pcs + 1
            )));
        }
        if self.gamma.len() != n * n {
            return Err(Error::invalid("ARD weights do not match the region count"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) || !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma and lambda must be positive, got {} and {}",
                self.sigma, self.lambda
            )));
        }
        if !self.a.is_stable(0.0) {
            return Err(Error::Unstable("connectivity matrix is not stable".into()));
        }
        Ok(())
    }
}

/// Linear Gaussian state-space model of the BOLD series on the extended
/// state `𝐱(k) = [x(k); …; x(k−s+1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedStateSystem {
    /// `e^{A T_R}`, the only non-trivial block of the companion transition.
    pub phi: Mat,
    /// FIR response `h = Hα` (length `s`).
    pub h: Vector,
    /// Leading noise block `Q`.
    pub q: Mat,
    pub lambda2: f64,
    pub n: usize,
    pub s: usize,
    pub t_r: f64,
}

impl ExtendedStateSystem {
    pub fn dim(&self) -> usize {
        self.n * self.s
    }

    /// `[[e^{AT_R}, 0], [I_{n(s−1)}, 0]]`.
    pub fn abold(&self) -> Mat {
        let (n, ns) = (self.n, self.dim());
        let mut a = Mat::zeros(ns, ns);
        a.view_mut((0, 0), (n, n)).copy_from(&self.phi);
        for i in n..ns {
            a[(i, i - n)] = 1.0;
        }
        a
    }

    /// `(Hα)ᵀ ⊗ I_n`.
    pub fn cbold(&self) -> Mat {
        linalg::kron(
            &Mat::from_row_slice(1, self.s, self.h.as_slice()),
            &Mat::identity(self.n, self.n),
        )
    }

    /// `blkdiag(Q, 0)`.
    pub fn qbold(&self) -> Mat {
        let ns = self.dim();
        let mut q = Mat::zeros(ns, ns);
        q.view_mut((0, 0), (self.n, self.n)).copy_from(&self.q);
        q
    }

    pub fn r(&self) -> Mat {
        Mat::identity(self.n, self.n) * self.lambda2
    }
}

pub fn build_extended_system(eta: &EMParameters, basis: &HemoBasis) -> Result<ExtendedStateSystem> {
    eta.validate(basis)?;
    if !eta.a.is_stable(DEFAULT_STABILITY_MARGIN) {
        return Err(Error::Unstable("connectivity matrix is not stable".into()));
    }
    let alpha = Vector::from_vec(eta.alpha.clone());
    let phi = eta.a.discretize(basis.t_r)?.phi;
    let q = process_noise_integral(&eta.a, eta.sigma, basis.t_r)?.q;
    Ok(ExtendedStateSystem {
        phi,
        h: basis.response(&alpha),
        q,
        lambda2: eta.lambda * eta.lambda,
        n: eta.a.n(),
        s: basis.taps,
        t_r: basis.t_r,
    })
}

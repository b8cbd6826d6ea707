use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::statespace::regularized_inverse;

use super::regression::RegressionData;

pub const DEFAULT_GAMMA0: f64 = 0.25;

/// Variances at or below this value mark a pruned coefficient.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// ARD prior variances for `vec(Aᵀ)`, i.e. for the entries of `A` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GammaWeights {
    pub gamma: Vec<f64>,
}

impl GammaWeights {
    pub fn constant(len: usize, value: f64) -> Self {
        Self { gamma: vec![value; len] }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn is_pruned(&self, i: usize) -> bool {
        self.gamma[i] <= GAMMA_FLOOR
    }

    pub fn pruned_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_pruned(i)).count()
    }

    /// `Σ aᵢ²/γᵢ` over unpruned entries.
    pub fn penalty(&self, a: &Vector) -> f64 {
        a.iter()
            .zip(&self.gamma)
            .filter(|(_, &g)| g > GAMMA_FLOOR)
            .map(|(v, g)| v * v / g)
            .sum()
    }
}

/// Fisher information of `vec(Aᵀ)` in the linearized model with noise
/// `Q ⊗ I`: `T_R² (Q⁻¹ ⊗ XᵀX)`.
pub fn linear_information(sxx: &Mat, qinv: &Mat, t_r: f64) -> Mat {
    linalg::kron(qinv, sxx) * (t_r * t_r)
}

/// Solves `(Γ⁻¹ + B) u = c` and returns `(diag((Γ⁻¹ + B)⁻¹), u)`.
///
/// Works in the scaled form `Γ^{½}(I + Γ^{½} B Γ^{½})⁻¹ Γ^{½}` so that
/// vanishing variances are handled without inverting `Γ`.
pub(crate) fn posterior_solve(gamma: &GammaWeights, info: &Mat, rhs: Option<&Vector>) -> Result<(Vector, Vector)> {
    let m = gamma.len();
    if info.shape() != (m, m) {
        return Err(Error::invalid(format!(
            "information matrix is {:?}, expected {m}x{m}",
            info.shape()
        )));
    }
    let root = Vector::from_iterator(m, gamma.gamma.iter().map(|g| g.max(0.0).sqrt()));
    let mut k = Mat::identity(m, m);
    for i in 0..m {
        for j in 0..m {
            k[(i, j)] += root[i] * info[(i, j)] * root[j];
        }
    }
    let (chol, _) = linalg::robust_cholesky(&k)?;
    let kinv = chol.inverse();
    let diag = Vector::from_iterator(m, (0..m).map(|i| gamma.gamma[i].max(0.0) * kinv[(i, i)]));
    let sol = match rhs {
        Some(c) => {
            let scaled = c.component_mul(&root);
            (&kinv * scaled).component_mul(&root)
        }
        None => Vector::zeros(m),
    };
    Ok((diag, sol))
}

/// `γᵢ' = aᵢ² + [(Γ⁻¹ + B)⁻¹]ᵢᵢ` for a given information matrix `B`.
///
/// Algebraically identical to `aᵢ² + γᵢ − γᵢ² φᵢᵀ(ΦΓΦᵀ + Q⊗I)⁻¹φᵢ` when
/// `B = Φᵀ(Q⊗I)⁻¹Φ`. A zero variance contributes no posterior spread, so
/// pruned coefficients (held at `aᵢ = 0`) stay pruned.
pub fn gamma_update(a: &Vector, gamma: &GammaWeights, info: &Mat) -> Result<GammaWeights> {
    if a.len() != gamma.len() {
        return Err(Error::invalid(format!(
            "coefficient vector has {} entries, weights {}",
            a.len(),
            gamma.len()
        )));
    }
    let (diag, _) = posterior_solve(gamma, info, None)?;
    let gamma = (0..a.len()).map(|i| a[i] * a[i] + diag[i].max(0.0)).collect();
    Ok(GammaWeights { gamma })
}

/// γ update of the reweighted scheme for measured data.
pub fn gamma_step(a: &Vector, gamma: &GammaWeights, data: &RegressionData, q: &Mat) -> Result<GammaWeights> {
    let n = data.n();
    if q.shape() != (n, n) || a.len() != n * n {
        return Err(Error::invalid("dimension mismatch in gamma_step"));
    }
    let qinv = regularized_inverse(q)?;
    let sxx = data.x.transpose() * &data.x;
    gamma_update(a, gamma, &linear_information(&sxx, &qinv, data.t_r))
}

//! Sparse estimation from measured neuronal activity: reweighted ARD for `A`
//! and `σ`, MAP estimates of the hemodynamic coefficients.

mod alpha;
mod ard;
mod astep;
mod regression;
mod reweighted;

pub use alpha::{design_matrix, estimate_alpha, extended_state, phi_of, stack_rows, AlphaEstimate};
pub use ard::{gamma_step, gamma_update, linear_information, GammaWeights, DEFAULT_GAMMA0, GAMMA_FLOOR};
#[allow(unused_imports)]
pub(crate) use astep::minimize_connectivity;
pub use astep::{
    a_objective, a_step, linear_a_step, sigma_step, sigma_step_from_series, transition_cost, AStepOptions,
    AStepOutcome,
};
pub use regression::{a_from_vec, a_vec, build_regression, RegressionData, TransitionStats};
pub use reweighted::{run_reweighted, AStepKind, IterationRecord, ReweightedOptions, ReweightedResult};

use crate::linalg::Mat;

pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Zeroes every entry with `|a| < thresh`.
pub fn threshold_matrix(a: &Mat, thresh: f64) -> Mat {
    a.map(|v| if v.abs() < thresh { 0.0 } else { v })
}

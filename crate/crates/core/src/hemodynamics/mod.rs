//! Hemodynamic forward model and its linearized FIR surrogate.

mod balloon;
mod basis;

pub use balloon::{
    balloon_derivatives, bold_output, integrate_balloon, BalloonParams, BalloonState, BoldPhysics,
    OutputConstants, MAX_DT,
};
pub use basis::{
    build_basis, build_fir_basis, impulse_response, impulse_response_with_height, pulse_response,
    sample_hemo_params, sample_responses, DEFAULT_IMPULSE_HEIGHT, Gaussian, HemoBasis, HemoPrior, HemodynamicsConfig,
};

//! BOLD-only estimation: the extended state-space model, the RTS smoother and
//! MAP-EM over `η = {A, α, σ, λ}`.

mod mstep;
mod run;
mod smoother;
mod stats;
pub(crate) mod system;

pub use mstep::{alpha_lambda_step, connectivity_noise_step, m_step, sigma_from_stats, MStepOptions, MStepReport};
pub use run::{em_run, initial_parameters, EmDiagnostics, EmIteration, EmOptions, EmResult};
pub use smoother::{rts_smooth, rts_smooth_dense, SmootherOutput};
pub use stats::{e_step, log_prior, penalized_surrogate, q_function, sufficient_stats, EStepSummary, SufficientStats};
pub use system::{build_extended_system, EMParameters, ExtendedStateSystem};

//! Evaluation metrics, the Monte-Carlo benchmark harness and figure data.

mod benchmark;
mod figure;
mod metrics;

pub use benchmark::{
    median, run_table1, run_table3, sample_sd, ArmReport, BenchmarkReport, PaperValue, RunRecord, PROTOCOL,
    SPECTRAL_DCM_REFERENCE_RMSE,
};
pub use figure::{export_figure_data, figure_csv};
pub use metrics::{err, off_diagonal_err, rmse, SparsityPattern};

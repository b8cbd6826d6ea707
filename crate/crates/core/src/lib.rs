//! Sparse effective-connectivity estimation from resting-state BOLD signals.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod em;
pub mod error;
pub mod eval;
pub mod hemodynamics;
pub mod io;
pub mod linalg;
pub mod optimize;
pub mod sim;
pub mod sparse;
pub mod statespace;

pub use error::{Error, Result};

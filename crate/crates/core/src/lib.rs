//! Kernel ridge regression for Hamiltonian vector fields with
//! structure-encoding kernels and random Fourier features.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod features;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod systems;
pub mod tuning;

pub use error::{Error, Result};

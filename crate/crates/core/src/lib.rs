//! Empirical-likelihood and IVX inference for quantile predictive regressions
//! with persistent (local-to-unity) regressors: simulation, estimation,
//! bootstrap calibration and a Monte Carlo harness.

pub mod asym;
pub mod bootstrap;
pub mod data;
pub mod dgp;
pub mod el;
pub mod error;
pub mod inference;
pub mod ivx;
pub mod mc;
pub mod parallel;
pub mod qr;
pub mod sample;
pub mod seed;
pub mod stats;

pub use error::{QprError, Result};

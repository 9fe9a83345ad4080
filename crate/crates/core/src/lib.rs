//! Cross-fitted targeted maximum likelihood estimation of the average
//! treatment effect when the outcome mean follows a known linear-in-parameters
//! structure and the additive error law is left unspecified.
//!
//! The crate is organised bottom-up:
//!
//! - [`design`]: datasets, the structured mean model and least squares.
//! - [`errordist`]: kernel estimate of the residual density and its score.
//! - [`effscore`]: efficient regression score, information matrix,
//!   influence functions and the efficiency bound.
//! - [`tmle`]: fold plans, the scalar targeting step and (repeated)
//!   cross-fitting.
//! - [`benchmarks`]: Gaussian OLS, logistic regression and cross-fitted AIPW.
//! - [`simlab`]: simulation designs, seeded streams and the Monte Carlo driver.

pub mod benchmarks;
pub mod design;
pub mod effscore;
pub mod error;
pub mod errordist;
mod linalg;
mod par;
pub mod rootfind;
pub mod seeds;
pub mod simlab;
pub mod tmle;

pub use error::{Error, Result};

/// Multiplier for all 95% Wald intervals.
pub const Z_95: f64 = 1.96;

//! Maximum-likelihood theory for high-dimensional logistic regression with
//! correlated Gaussian covariates.
//!
//! The crate covers the whole pipeline around the logistic MLE when the number
//! of variables grows proportionally with the sample size:
//!
//! * [`designs`]: covariance models (identity, AR(1), random correlation,
//!   explicit), Gaussian design sampling and conditional-variance geometry.
//! * [`logistic`]: log-likelihood, damped Newton MLE, restricted fits,
//!   likelihood-ratio statistics and linear-separability detection.
//! * [`theory`]: the link family, the proximal operator, the fixed-point
//!   system for `(α⋆, σ⋆, λ⋆)` and the Monte-Carlo existence frontier.
//! * [`probe`]: signal-strength estimation by subsampling to separability.
//! * [`inference`]: bias-corrected intervals, adjusted t and rescaled LRT
//!   p-values.
//! * [`sim`]: seeded Monte-Carlo experiments and their table outputs.

// Range checks are written `!(x > lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod designs;
mod error;
pub mod inference;
pub mod linalg;
pub mod logistic;
pub mod probe;
pub mod rng;
pub mod sim;
pub mod special;
pub mod theory;

pub use error::{Error, Result};

//! Logistic log-likelihood, damped Newton MLE, restricted fits and the
//! log-likelihood-ratio statistic.
//!
//! Labels are ±1 and the model has no intercept:
//! `ℓ(b) = Σ_i −log(1 + exp(−y_i x_iᵀ b))`.

mod separability;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::linalg::{cholesky_with_ridge, weighted_gram, weighted_gram_f32};
use crate::{Error, Result};

pub use separability::{check_separable, check_separable_lp, SeparabilityReport};

/// Class labels in {−1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels(Vec<f64>);

impl Labels {
    pub fn new(y: Vec<f64>) -> Result<Self> {
        if let Some(i) = y.iter().position(|&v| v != 1.0 && v != -1.0) {
            return Err(invalid(format!("label {i} is {}, expected -1 or +1", y[i])));
        }
        Ok(Self(y))
    }

    pub fn from_bools(y: impl IntoIterator<Item = bool>) -> Self {
        Self(y.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        self.0.contains(&1.0) && self.0.contains(&-1.0)
    }

    pub fn subset(&self, rows: &[usize]) -> Labels {
        Labels(rows.iter().map(|&i| self.0[i]).collect())
    }
}

/// Draws `y_i = +1` with probability `1/(1+e^{−η_i})`, one uniform per row.
pub fn sample_labels<R: Rng + ?Sized>(eta: &DVector<f64>, rng: &mut R) -> Labels {
    Labels(
        eta.iter()
            .map(|&e| if rng.random::<f64>() < sigmoid(e) { 1.0 } else { -1.0 })
            .collect(),
    )
}

/// `1 / (1 + e^{−t})` without overflow.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `softplus(a) − softplus(b)` with relative accuracy even when the two are
/// nearly equal.
fn softplus_diff(a: f64, b: f64) -> f64 {
    let d = a - b;
    if d.abs() > 30.0 {
        softplus(a) - softplus(b)
    } else {
        (d.exp_m1() * sigmoid(b)).ln_1p()
    }
}

fn check_dims(x: &DMatrix<f64>, y: &Labels) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but there are {} labels",
            x.nrows(),
            y.len()
        )));
    }
    Ok(())
}

fn loglik_from_eta(eta: &DVector<f64>, y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(e, yi)| -softplus(-yi * e)).sum()
}

/// `ℓ(b) = Σ_i −log(1 + exp(−y_i x_iᵀ b))`.
pub fn log_likelihood(b: &DVector<f64>, x: &DMatrix<f64>, y: &Labels) -> Result<f64> {
    check_dims(x, y)?;
    if b.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vector has length {}, design has {} columns",
            b.len(),
            x.ncols()
        )));
    }
    Ok(loglik_from_eta(&(x * b), y.as_slice()))
}

fn gradient_from_eta(x: &DMatrix<f64>, eta: &DVector<f64>, y: &[f64]) -> DVector<f64> {
    let r = DVector::from_iterator(y.len(), eta.iter().zip(y).map(|(e, yi)| yi * sigmoid(-yi * e)));
    x.tr_mul(&r)
}

fn weights_from_eta(eta: &DVector<f64>) -> Vec<f64> {
    eta.iter().map(|&e| sigmoid(e) * sigmoid(-e)).collect()
}

/// Gradient and Hessian of `ℓ` at `b`. The Hessian is `−Xᵀ D X` with
/// `D_ii = ρ''(x_iᵀ b)`.
pub fn grad_hess(b: &DVector<f64>, x: &DMatrix<f64>, y: &Labels) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dims(x, y)?;
    let eta = x * b;
    let g = gradient_from_eta(x, &eta, y.as_slice());
    let h = -weighted_gram(x, &weights_from_eta(&eta));
    Ok((g, h))
}

/// Fisher information `Xᵀ D X` at `b` (observed and expected coincide for the
/// canonical logit link).
pub fn information(x: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    weighted_gram(x, &weights_from_eta(&(x * b)))
}

/// Why a Newton fit stopped without meeting the gradient tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// An iterate classified every observation correctly: the data are
    /// completely separable and the MLE does not exist.
    Separated,
    /// `‖b‖` exceeded the norm cap, typical of (quasi-)separation.
    NormCapExceeded,
    MaxIterations,
    LineSearchStalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianPrecision {
    Double,
    Single,
    /// Single precision once `p` is large enough for the Gram product to
    /// dominate.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop when `‖∇ℓ‖₂` falls to this value; `None` means `1e-8 · n`.
    pub grad_tol: Option<f64>,
    pub norm_cap: f64,
    pub precision: HessianPrecision,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: None,
            norm_cap: 1e3,
            precision: HessianPrecision::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
    pub grad_norm: f64,
    pub failure: Option<FailureKind>,
}

impl FitResult {
    pub fn separated(&self) -> bool {
        self.failure == Some(FailureKind::Separated)
    }

    /// Converts a failed fit into an error carrying its diagnostics.
    pub fn require_converged(self) -> Result<Self> {
        match self.failure {
            None if self.converged => Ok(self),
            kind => Err(Error::NotConverged {
                kind: kind.unwrap_or(FailureKind::MaxIterations),
                iterations: self.iterations,
                grad_norm: self.grad_norm,
            }),
        }
    }
}

const SINGLE_PRECISION_MIN_P: usize = 128;
const MAX_HALVINGS: usize = 30;
const ARMIJO: f64 = 1e-4;

/// Maximum-likelihood fit by damped Newton from `b = 0`.
pub fn fit_mle(x: &DMatrix<f64>, y: &Labels, opts: &FitOptions) -> Result<FitResult> {
    fit_mle_from(x, y, opts, None)
}

/// As [`fit_mle`], starting from `start` when given.
pub fn fit_mle_from(
    x: &DMatrix<f64>,
    y: &Labels,
    opts: &FitOptions,
    start: Option<&DVector<f64>>,
) -> Result<FitResult> {
    check_dims(x, y)?;
    let (n, p) = x.shape();
    let yv = y.as_slice();
    let tol = opts.grad_tol.unwrap_or(1e-8 * n as f64);
    let mut single = match opts.precision {
        HessianPrecision::Double => false,
        HessianPrecision::Single => true,
        HessianPrecision::Auto => p >= SINGLE_PRECISION_MIN_P,
    };

    let mut b = match start {
        Some(s) if s.len() == p => s.clone(),
        Some(s) => {
            return Err(Error::DimensionMismatch(format!(
                "start has length {}, expected {p}",
                s.len()
            )))
        }
        None => DVector::zeros(p),
    };
    let mut eta = x * &b;
    let mut grad = gradient_from_eta(x, &eta, yv);
    let finish =
        |b: DVector<f64>, eta: &DVector<f64>, grad: &DVector<f64>, it, failure: Option<FailureKind>| FitResult {
            loglik: loglik_from_eta(eta, yv),
            grad_norm: grad.norm(),
            converged: failure.is_none(),
            beta_hat: b,
            iterations: it,
            failure,
        };

    let mut iter = 0;
    loop {
        if grad.norm() <= tol {
            return Ok(finish(b, &eta, &grad, iter, None));
        }
        if n > 0 && eta.iter().zip(yv).all(|(e, yi)| yi * e > 0.0) {
            return Ok(finish(b, &eta, &grad, iter, Some(FailureKind::Separated)));
        }
        if iter >= opts.max_iter {
            return Ok(finish(b, &eta, &grad, iter, Some(FailureKind::MaxIterations)));
        }
        iter += 1;

        let w = weights_from_eta(&eta);
        let h = if single {
            weighted_gram_f32(x, &w)
        } else {
            weighted_gram(x, &w)
        };
        let (chol, _) = cholesky_with_ridge(&h, 1e-10)?;
        let d = chol.solve(&grad);
        let slope = grad.dot(&d);
        let xd = x * &d;

        let mut step = 1.0;
        let mut accepted = None;
        if slope > 0.0 {
            for _ in 0..=MAX_HALVINGS {
                let trial = &eta + step * &xd;
                let gain: f64 = eta
                    .iter()
                    .zip(trial.iter())
                    .zip(yv)
                    .map(|((e0, e1), yi)| softplus_diff(-yi * e0, -yi * e1))
                    .sum();
                if gain >= ARMIJO * step * slope {
                    accepted = Some(trial);
                    break;
                }
                step *= 0.5;
            }
        }
        match accepted {
            Some(trial) => {
                b.axpy(step, &d, 1.0);
                eta = trial;
                grad = gradient_from_eta(x, &eta, yv);
                if b.norm() > opts.norm_cap {
                    return Ok(finish(b, &eta, &grad, iter, Some(FailureKind::NormCapExceeded)));
                }
            }
            None if single => {
                log::debug!("line search stalled with single-precision Hessian; retrying in double");
                single = false;
            }
            None => {
                return Ok(finish(b, &eta, &grad, iter, Some(FailureKind::LineSearchStalled)));
            }
        }
    }
}

fn validate_subset(p: usize, s: &[usize]) -> Result<Vec<bool>> {
    let mut dropped = vec![false; p];
    for &j in s {
        if j >= p {
            return Err(invalid(format!("index {j} out of range for p = {p}")));
        }
        if std::mem::replace(&mut dropped[j], true) {
            return Err(invalid(format!("duplicate index {j}")));
        }
    }
    Ok(dropped)
}

/// MLE with the coordinates in `s` pinned to zero.
pub fn fit_restricted(x: &DMatrix<f64>, y: &Labels, s: &[usize], opts: &FitOptions) -> Result<FitResult> {
    fit_restricted_from(x, y, s, opts, None)
}

/// As [`fit_restricted`]; `start` is a full-length vector whose entries
/// outside `s` seed the reduced fit.
pub fn fit_restricted_from(
    x: &DMatrix<f64>,
    y: &Labels,
    s: &[usize],
    opts: &FitOptions,
    start: Option<&DVector<f64>>,
) -> Result<FitResult> {
    check_dims(x, y)?;
    let p = x.ncols();
    let dropped = validate_subset(p, s)?;
    if s.is_empty() {
        return fit_mle_from(x, y, opts, start);
    }
    let keep: Vec<usize> = (0..p).filter(|&j| !dropped[j]).collect();
    let xr = x.select_columns(&keep);
    let start_r = start.map(|s0| DVector::from_iterator(keep.len(), keep.iter().map(|&j| s0[j])));
    let fit = fit_mle_from(&xr, y, opts, start_r.as_ref())?;
    let mut beta = DVector::zeros(p);
    for (k, &j) in keep.iter().enumerate() {
        beta[j] = fit.beta_hat[k];
    }
    Ok(FitResult { beta_hat: beta, ..fit })
}

/// `max_b ℓ − max_{b_S = 0} ℓ`.
pub fn llr(x: &DMatrix<f64>, y: &Labels, s: &[usize], opts: &FitOptions) -> Result<f64> {
    let full = fit_mle(x, y, opts)?.require_converged()?;
    llr_given_full(x, y, &full, s, opts)
}

/// LLR reusing an already converged unrestricted fit; the restricted fit is
/// warm-started from it.
pub fn llr_given_full(x: &DMatrix<f64>, y: &Labels, full: &FitResult, s: &[usize], opts: &FitOptions) -> Result<f64> {
    validate_subset(x.ncols(), s)?;
    if s.is_empty() {
        return Ok(0.0);
    }
    let restricted = fit_restricted_from(x, y, s, opts, Some(&full.beta_hat))?.require_converged()?;
    Ok((full.loglik - restricted.loglik).max(0.0))
}

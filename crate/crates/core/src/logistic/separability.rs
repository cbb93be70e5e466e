//! Complete-separation detection.
//!
//! The data `(x_i, y_i)` are completely separable iff some `b` has
//! `y_i x_iᵀ b ≥ 1` for all `i`. With `a_i = y_i x_i`, Gordan's alternative
//! says this fails exactly when some non-zero `w ≥ 0` has `Σ w_i a_i = 0`, so
//! the LP
//!
//! ```text
//! max 1ᵀw   s.t.   Aᵀw = 0,   0 ≤ w ≤ 1
//! ```
//!
//! has value 0 iff the data are separable, and its dual prices are then a
//! separating `b`. A short Newton run settles most instances first: an
//! iterate with all margins positive is a separator, and a converged fit
//! certifies that the MLE exists.

use nalgebra::{DMatrix, DVector};

use super::{fit_mle, FitOptions, HessianPrecision, Labels};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SeparabilityReport {
    pub separable: bool,
    /// A `b` with `min_i y_i x_iᵀ b ≥ 1` (up to 1e-6), when separable.
    pub witness: Option<DVector<f64>>,
}

const WITNESS_TOL: f64 = 1e-6;
const SCREEN_ITERATIONS: usize = 60;

fn margins(x: &DMatrix<f64>, y: &Labels, b: &DVector<f64>) -> DVector<f64> {
    let mut m = x * b;
    for (v, yi) in m.iter_mut().zip(y.as_slice()) {
        *v *= yi;
    }
    m
}

fn separable_with(x: &DMatrix<f64>, y: &Labels, b: DVector<f64>) -> Option<SeparabilityReport> {
    let min = margins(x, y, &b).min();
    if !(min > 0.0) {
        return None;
    }
    let witness = b * ((1.0 + 1e-12) / min);
    (margins(x, y, &witness).min() >= 1.0 - WITNESS_TOL).then_some(SeparabilityReport {
        separable: true,
        witness: Some(witness),
    })
}

/// Decides complete separability, returning a witness hyperplane when one
/// exists.
pub fn check_separable(x: &DMatrix<f64>, y: &Labels) -> Result<SeparabilityReport> {
    super::check_dims(x, y)?;
    if x.nrows() == 0 {
        return Ok(SeparabilityReport {
            separable: true,
            witness: Some(DVector::zeros(x.ncols())),
        });
    }
    let screen = FitOptions {
        max_iter: SCREEN_ITERATIONS,
        grad_tol: None,
        norm_cap: f64::INFINITY,
        precision: HessianPrecision::Auto,
    };
    let fit = fit_mle(x, y, &screen)?;
    if fit.converged {
        return Ok(SeparabilityReport {
            separable: false,
            witness: None,
        });
    }
    if fit.separated() {
        if let Some(report) = separable_with(x, y, fit.beta_hat) {
            return Ok(report);
        }
    }
    log::debug!(
        "Newton screen inconclusive ({:?}); solving the separation LP",
        fit.failure
    );
    check_separable_lp(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Basic,
    Lower,
    Upper,
}

/// Decides separability with a bounded-variable revised simplex only.
pub fn check_separable_lp(x: &DMatrix<f64>, y: &Labels) -> Result<SeparabilityReport> {
    super::check_dims(x, y)?;
    // Column j < n of the constraint matrix is a_j = y_j x_j; columns n..n+p
    // are artificials fixed at zero, which form the starting basis.
    let mut at = x.transpose();
    for (j, yj) in y.as_slice().iter().enumerate() {
        at.column_mut(j).scale_mut(*yj);
    }
    Simplex::new(&at).solve().and_then(|outcome| match outcome {
        Outcome::Separable(pi) => separable_with(x, y, pi)
            .ok_or_else(|| Error::Indeterminate("LP dual prices do not separate the data".into())),
        Outcome::NotSeparable => Ok(SeparabilityReport {
            separable: false,
            witness: None,
        }),
    })
}

enum Outcome {
    Separable(DVector<f64>),
    NotSeparable,
}

struct Simplex<'a> {
    at: &'a DMatrix<f64>,
    n: usize,
    p: usize,
    basis: Vec<usize>,
    state: Vec<State>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
}

const PRICE_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const OBJECTIVE_TOL: f64 = 1e-7;
const REFACTOR_EVERY: usize = 64;
const BLAND_AFTER: usize = 50;

impl<'a> Simplex<'a> {
    fn new(at: &'a DMatrix<f64>) -> Self {
        let (p, n) = at.shape();
        let mut state = vec![State::Lower; n + p];
        for s in &mut state[n..] {
            *s = State::Basic;
        }
        Self {
            at,
            n,
            p,
            basis: (n..n + p).collect(),
            state,
            binv: DMatrix::identity(p, p),
            xb: DVector::zeros(p),
        }
    }

    fn column(&self, v: usize) -> DVector<f64> {
        if v < self.n {
            self.at.column(v).into_owned()
        } else {
            let mut e = DVector::zeros(self.p);
            e[v - self.n] = 1.0;
            e
        }
    }

    fn upper(&self, v: usize) -> f64 {
        if v < self.n {
            1.0
        } else {
            0.0
        }
    }

    fn objective(&self) -> f64 {
        let at_upper = self.state[..self.n].iter().filter(|s| **s == State::Upper).count() as f64;
        let basic: f64 = self
            .basis
            .iter()
            .zip(self.xb.iter())
            .filter(|(v, _)| **v < self.n)
            .map(|(_, x)| *x)
            .sum();
        at_upper + basic
    }

    fn refactor(&mut self) -> Result<()> {
        let b = DMatrix::from_columns(&self.basis.iter().map(|&v| self.column(v)).collect::<Vec<_>>());
        self.binv = b
            .try_inverse()
            .ok_or_else(|| Error::Indeterminate("simplex basis became singular".into()))?;
        let mut rhs = DVector::zeros(self.p);
        for j in 0..self.n {
            if self.state[j] == State::Upper {
                rhs -= self.at.column(j);
            }
        }
        self.xb = &self.binv * rhs;
        Ok(())
    }

    fn solve(mut self) -> Result<Outcome> {
        let cap = 20 * (self.n + self.p) + 1000;
        let mut degenerate_streak = 0;
        for iter in 0..cap {
            if iter > 0 && iter % REFACTOR_EVERY == 0 {
                self.refactor()?;
            }
            if self.objective() > OBJECTIVE_TOL {
                return Ok(Outcome::NotSeparable);
            }
            let cb = DVector::from_iterator(self.p, self.basis.iter().map(|&v| (v < self.n) as u8 as f64));
            let pi = self.binv.tr_mul(&cb);
            let priced = self.at.tr_mul(&pi);
            let bland = degenerate_streak > BLAND_AFTER;
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n {
                let d = 1.0 - priced[j];
                let eligible = match self.state[j] {
                    State::Lower => d > PRICE_TOL,
                    State::Upper => d < -PRICE_TOL,
                    State::Basic => false,
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, best)| d.abs() > best.abs()) {
                    entering = Some((j, d));
                }
            }
            let Some((q, _)) = entering else {
                return Ok(if self.objective() > OBJECTIVE_TOL {
                    Outcome::NotSeparable
                } else {
                    Outcome::Separable(pi)
                });
            };

            let dir = if self.state[q] == State::Lower { 1.0 } else { -1.0 };
            let alpha = &self.binv * self.column(q);
            let mut theta = self.upper(q);
            let mut leave: Option<(usize, State)> = None;
            for i in 0..self.p {
                let delta = dir * alpha[i];
                let v = self.basis[i];
                let (limit, hits) = if delta > PIVOT_TOL {
                    (self.xb[i] / delta, State::Lower)
                } else if delta < -PIVOT_TOL {
                    ((self.upper(v) - self.xb[i]) / -delta, State::Upper)
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let better = match leave {
                    None => limit < theta,
                    Some((r, _)) => limit < theta - 1e-12 || (bland && limit <= theta + 1e-12 && v < self.basis[r]),
                };
                if better {
                    theta = limit;
                    leave = Some((i, hits));
                }
            }

            degenerate_streak = if theta < 1e-12 { degenerate_streak + 1 } else { 0 };
            self.xb.axpy(-theta * dir, &alpha, 1.0);
            match leave {
                None => {
                    self.state[q] = if dir > 0.0 { State::Upper } else { State::Lower };
                }
                Some((r, hits)) => {
                    let out = self.basis[r];
                    self.state[out] = if out < self.n { hits } else { State::Lower };
                    self.state[q] = State::Basic;
                    self.basis[r] = q;
                    self.xb[r] = if dir > 0.0 { theta } else { 1.0 - theta };
                    let pivot = alpha[r];
                    for c in 0..self.p {
                        let mut col = self.binv.column_mut(c);
                        let rc = col[r] / pivot;
                        if rc != 0.0 {
                            col.axpy(-rc, &alpha, 1.0);
                        }
                        col[r] = rc;
                    }
                }
            }
        }
        Err(Error::Indeterminate(format!(
            "separation LP hit its iteration cap of {cap}"
        )))
    }
}

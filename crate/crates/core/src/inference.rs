//! Bias-corrected inference for the logistic MLE: conditional-variance
//! estimates, adjusted confidence intervals, adjusted t p-values and rescaled
//! likelihood-ratio p-values.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::linalg::{cholesky_strict, gram, inverse_diag, inverse_diag_entry};
use crate::logistic::{llr_given_full, FitOptions, FitResult, Labels};
use crate::special::{chi2_sf, normal_quantile, normal_sf};
use crate::theory::FixedPoint;
use crate::{Error, Result};

fn check_regressable(x: &DMatrix<f64>) -> Result<()> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(invalid(format!(
            "need n > p for residual-based estimates, got n = {n}, p = {p}"
        )));
    }
    Ok(())
}

fn gram_factor(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    cholesky_strict(&gram(x), "XᵀX").map_err(|_| Error::RankDeficient("XᵀX is numerically singular".into()))
}

/// `τ̂_j` from the residual sum of squares of column `j` regressed on the
/// other columns: `τ̂_j² = (RSS_j / n) / (1 − p/n)`.
///
/// Uses `RSS_j = 1 / [(XᵀX)⁻¹]_jj`.
pub fn estimate_tau_rss(x: &DMatrix<f64>, j: usize) -> Result<f64> {
    check_regressable(x)?;
    if j >= x.ncols() {
        return Err(invalid(format!("column {j} out of range")));
    }
    let l = gram_factor(x)?;
    Ok(tau_from_rss(1.0 / inverse_diag_entry(&l, j), x.nrows(), x.ncols()))
}

/// [`estimate_tau_rss`] for every column at once.
pub fn estimate_tau_rss_all(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_regressable(x)?;
    let l = gram_factor(x)?;
    let (n, p) = x.shape();
    Ok(inverse_diag(&l)
        .into_iter()
        .map(|d| tau_from_rss(1.0 / d, n, p))
        .collect())
}

/// [`estimate_tau_rss`] for the listed columns, sharing one factorization.
pub fn estimate_tau_rss_at(x: &DMatrix<f64>, cols: &[usize]) -> Result<Vec<f64>> {
    check_regressable(x)?;
    let (n, p) = x.shape();
    if let Some(j) = cols.iter().find(|&&j| j >= p) {
        return Err(invalid(format!("column {j} out of range")));
    }
    let l = gram_factor(x)?;
    Ok(cols
        .iter()
        .map(|&j| tau_from_rss(1.0 / inverse_diag_entry(&l, j), n, p))
        .collect())
}

fn tau_from_rss(rss: f64, n: usize, p: usize) -> f64 {
    let kappa = p as f64 / n as f64;
    (rss / n as f64 / (1.0 - kappa)).sqrt()
}

/// Maximum-likelihood `ρ̂` treating each row as a stationary unit-variance
/// AR(1) series, pooled over rows.
pub fn estimate_rho_ar1(x: &DMatrix<f64>) -> Result<f64> {
    let (n, p) = x.shape();
    if p < 2 {
        return Err(invalid("AR(1) correlation is undefined with fewer than two columns"));
    }
    // Σ_j≥2 (x_j − ρx_{j−1})² = a − 2ρb + ρ²c, pooled over rows.
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for j in 1..p {
        let cur = x.column(j);
        let prev = x.column(j - 1);
        a += cur.norm_squared();
        b += cur.dot(&prev);
        c += prev.norm_squared();
    }
    let m = (n * (p - 1)) as f64;
    let loglik = |rho: f64| {
        let s = 1.0 - rho * rho;
        -(a - 2.0 * rho * b + rho * rho * c) / (2.0 * s) - 0.5 * m * s.ln()
    };
    const EDGE: f64 = 0.999;
    let steps = 1998;
    let h = 2.0 * EDGE / steps as f64;
    let best = (0..=steps)
        .map(|k| -EDGE + k as f64 * h)
        .max_by(|u, v| loglik(*u).total_cmp(&loglik(*v)))
        .expect("non-empty grid");
    if (best.abs() - EDGE).abs() < 0.5 * h {
        return Err(Error::InvalidParameter(format!(
            "AR(1) likelihood is maximized at the boundary rho = {best}"
        )));
    }
    let (mut lo, mut hi) = (best - h, best + h);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-12 {
        let c1 = hi - r * (hi - lo);
        let c2 = lo + r * (hi - lo);
        if loglik(c1) > loglik(c2) {
            hi = c2;
        } else {
            lo = c1;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Conditional standard deviations of the AR(1) correlation model. The
/// precision matrix is tridiagonal, so `Θ_jj` is `1/(1−ρ²)` at the two ends
/// and `(1+ρ²)/(1−ρ²)` inside.
pub fn ar1_conditional_sd(p: usize, rho: f64) -> Result<Vec<f64>> {
    if p == 0 || !(rho.abs() < 1.0) {
        return Err(invalid(format!("need p >= 1 and |rho| < 1, got p = {p}, rho = {rho}")));
    }
    let s = 1.0 - rho * rho;
    Ok((0..p)
        .map(|j| {
            if p == 1 {
                1.0
            } else if j == 0 || j == p - 1 {
                s.sqrt()
            } else {
                (s / (1.0 + rho * rho)).sqrt()
            }
        })
        .collect())
}

/// Bias-corrected interval `(β̂_j ∓ z·σ/(√n τ_j)) / α` at confidence `level`.
pub fn adjusted_ci(beta_hat: f64, alpha: f64, sigma: f64, tau: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0) || !(tau > 0.0) || !(sigma >= 0.0) {
        return Err(invalid("need alpha > 0, tau > 0 and sigma >= 0"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid(format!("level must lie in (0, 1), got {level}")));
    }
    let half = normal_quantile(0.5 * (1.0 + level)) * sigma / ((n as f64).sqrt() * tau);
    Ok(((beta_hat - half) / alpha, (beta_hat + half) / alpha))
}

/// Two-sided adjusted t p-value `2 Φ̄(√n τ_j |β̂_j| / σ)`.
pub fn t_pvalue(beta_hat: f64, sigma: f64, tau: f64, n: usize) -> f64 {
    (2.0 * normal_sf((n as f64).sqrt() * tau * beta_hat.abs() / sigma)).min(1.0)
}

/// `P(χ²_df ≥ (λ/(κσ²))·2·llr)`.
pub fn lrt_pvalue(llr: f64, kappa: f64, sigma: f64, lambda: f64, df: usize) -> Result<f64> {
    if !(llr >= 0.0) {
        return Err(invalid(format!("log-likelihood ratio must be >= 0, got {llr}")));
    }
    Ok(chi2_sf(lambda / (kappa * sigma * sigma) * 2.0 * llr, df))
}

/// `T_j = √n (β̂_j − α⋆β_j) τ_j / σ⋆`.
pub fn standardize_t(
    beta_hat: &DVector<f64>,
    beta: &DVector<f64>,
    alpha: f64,
    sigma: f64,
    tau: &[f64],
    n: usize,
) -> Result<DVector<f64>> {
    if beta_hat.len() != beta.len() || beta.len() != tau.len() {
        return Err(Error::DimensionMismatch(
            "beta_hat, beta and tau must have equal length".into(),
        ));
    }
    let sn = (n as f64).sqrt();
    Ok(DVector::from_fn(beta.len(), |j, _| {
        sn * (beta_hat[j] - alpha * beta[j]) * tau[j] / sigma
    }))
}

/// `√n Θ_S^{−1/2} (β̂_S − α⋆β_S) / σ⋆` with the symmetric square root.
pub fn standardize_multi(
    beta_hat_s: &DVector<f64>,
    beta_s: &DVector<f64>,
    theta_s: &DMatrix<f64>,
    alpha: f64,
    sigma: f64,
    n: usize,
) -> Result<DVector<f64>> {
    let k = beta_s.len();
    if beta_hat_s.len() != k || theta_s.shape() != (k, k) {
        return Err(Error::DimensionMismatch("block and vectors disagree in size".into()));
    }
    let eig = SymmetricEigen::new(theta_s.clone());
    if eig.eigenvalues.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::NotPositiveDefinite("precision block".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    let inv_sqrt = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    let centered = beta_hat_s - alpha * beta_s;
    Ok(inv_sqrt * centered * ((n as f64).sqrt() / sigma))
}

/// Where the conditional standard deviations come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TauSource {
    Rss,
    Ar1,
    Provided(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub n: usize,
    pub p: usize,
    pub kappa: f64,
    pub gamma_hat: f64,
    pub alpha_hat: f64,
    pub sigma_hat: f64,
    pub lambda_hat: f64,
    pub level: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRecord {
    pub j: usize,
    pub beta_hat: f64,
    pub tau_hat: f64,
    pub debiased: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_t: f64,
    pub p_lrt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub header: ReportHeader,
    pub records: Vec<CoefficientRecord>,
}

pub const REPORT_COLUMNS: &str = "j,beta_hat,tau_hat,debiased,ci_lo,ci_hi,p_t,p_lrt";

/// Assembles per-coordinate adjusted inference from a converged fit and the
/// fixed-point parameters. LRT p-values cost one restricted refit per
/// coordinate and are computed only when `with_lrt` is set.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    x: &DMatrix<f64>,
    y: &Labels,
    fit: &FitResult,
    params: &FixedPoint,
    tau_source: &TauSource,
    level: f64,
    with_lrt: bool,
    opts: &FitOptions,
) -> Result<InferenceReport> {
    if !fit.converged {
        return Err(invalid("inference needs a converged fit"));
    }
    let (n, p) = x.shape();
    if fit.beta_hat.len() != p {
        return Err(Error::DimensionMismatch("fit and design disagree".into()));
    }
    let mut rho_hat = None;
    let tau = match tau_source {
        TauSource::Rss => estimate_tau_rss_all(x)?,
        TauSource::Ar1 => {
            let rho = estimate_rho_ar1(x)?;
            rho_hat = Some(rho);
            ar1_conditional_sd(p, rho)?
        }
        TauSource::Provided(t) if t.len() == p => t.clone(),
        TauSource::Provided(t) => {
            return Err(Error::DimensionMismatch(format!(
                "{} tau values for {p} columns",
                t.len()
            )))
        }
    };
    let (alpha, sigma, lambda) = (params.alpha_star, params.sigma_star, params.lambda_star);
    let kappa = params.inputs.kappa;
    let p_lrt: Vec<Option<f64>> = if with_lrt {
        (0..p)
            .into_par_iter()
            .map(|j| {
                let v = llr_given_full(x, y, fit, &[j], opts)?;
                lrt_pvalue(v, kappa, sigma, lambda, 1).map(Some)
            })
            .collect::<Result<_>>()?
    } else {
        vec![None; p]
    };
    let records = (0..p)
        .map(|j| {
            let b = fit.beta_hat[j];
            let (ci_lo, ci_hi) = adjusted_ci(b, alpha, sigma, tau[j], n, level)?;
            Ok(CoefficientRecord {
                j,
                beta_hat: b,
                tau_hat: tau[j],
                debiased: b / alpha,
                ci_lo,
                ci_hi,
                p_t: t_pvalue(b, sigma, tau[j], n),
                p_lrt: p_lrt[j],
            })
        })
        .collect::<Result<_>>()?;
    Ok(InferenceReport {
        header: ReportHeader {
            n,
            p,
            kappa,
            gamma_hat: params.inputs.gamma,
            alpha_hat: alpha,
            sigma_hat: sigma,
            lambda_hat: lambda,
            level,
            rho_hat,
        },
        records,
    })
}

/// Full-precision decimal for CSV output (17 significant digits).
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

impl InferenceReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{REPORT_COLUMNS}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.j,
                fmt_num(r.beta_hat),
                fmt_num(r.tau_hat),
                fmt_num(r.debiased),
                fmt_num(r.ci_lo),
                fmt_num(r.ci_hi),
                fmt_num(r.p_t),
                r.p_lrt.map(fmt_num).unwrap_or_default()
            )?;
        }
        Ok(())
    }

    /// Writes `path` as CSV and `path` with a `.json` extension holding the
    /// header block.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))?;
        let sidecar = path.with_extension("json");
        let text = serde_json::to_string_pretty(&self.header)?;
        std::fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
    }
}

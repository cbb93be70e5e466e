//! Covariance models, Gaussian design sampling and the conditional-variance
//! geometry of a covariance matrix.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::linalg::{cholesky_strict, inv_lower};
use crate::rng::{purpose, substream};
use crate::{Error, Result};

const MAX_RESAMPLES: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovarianceKind {
    Identity { p: usize },
    Ar1 { p: usize, rho: f64 },
    RandomCorrelation { p: usize, df: u32, seed: u64 },
    Explicit { p: usize },
}

/// A validated covariance matrix with its Cholesky factor and precision
/// diagonal. Immutable once built.
#[derive(Debug, Clone)]
pub struct CovarianceSpec {
    pub kind: CovarianceKind,
    pub sigma: DMatrix<f64>,
    /// Lower-triangular `L` with `L Lᵀ = Σ`.
    pub chol: DMatrix<f64>,
    /// Diagonal of `Θ = Σ⁻¹`.
    pub theta_diag: Vec<f64>,
    /// `λ_max(Σ) / λ_min(Σ)`.
    pub cond: f64,
}

/// Declarative covariance model, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceDescriptor {
    Identity { p: usize },
    Ar1 { p: usize, rho: f64 },
    RandomCorrelation { p: usize, df: u32, seed: u64 },
    Explicit { path: String },
}

impl CovarianceDescriptor {
    /// Builds the spec; relative `explicit` paths resolve against `base_dir`.
    pub fn build(&self, base_dir: Option<&Path>) -> Result<CovarianceSpec> {
        match self {
            Self::Identity { p } => identity(*p),
            Self::Ar1 { p, rho } => build_ar1(*p, *rho),
            Self::RandomCorrelation { p, df, seed } => build_random_correlation(*p, *df, *seed),
            Self::Explicit { path } => {
                let mut full = Path::new(path).to_path_buf();
                if let (true, Some(base)) = (full.is_relative(), base_dir) {
                    full = base.join(full);
                }
                from_matrix(read_matrix_csv(&full)?)
            }
        }
    }

    pub fn p(&self) -> Option<usize> {
        match self {
            Self::Identity { p } | Self::Ar1 { p, .. } | Self::RandomCorrelation { p, .. } => Some(*p),
            Self::Explicit { .. } => None,
        }
    }
}

fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        rows.push(row);
    }
    let p = rows.len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::Config(format!("{} is not a square matrix", path.display())));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

fn finish(kind: CovarianceKind, sigma: DMatrix<f64>) -> Result<CovarianceSpec> {
    let chol = cholesky_strict(&sigma, "covariance matrix")?;
    let li = inv_lower(&chol);
    let theta_diag = (0..sigma.ncols()).map(|j| li.column(j).norm_squared()).collect();
    let eig = sigma.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "covariance matrix has eigenvalue {lo:e}"
        )));
    }
    Ok(CovarianceSpec {
        kind,
        sigma,
        chol,
        theta_diag,
        cond: hi / lo,
    })
}

pub fn identity(p: usize) -> Result<CovarianceSpec> {
    if p == 0 {
        return Err(invalid("dimension p must be at least 1"));
    }
    Ok(CovarianceSpec {
        kind: CovarianceKind::Identity { p },
        sigma: DMatrix::identity(p, p),
        chol: DMatrix::identity(p, p),
        theta_diag: vec![1.0; p],
        cond: 1.0,
    })
}

/// `Σ_ij = ρ^|i−j|`.
pub fn build_ar1(p: usize, rho: f64) -> Result<CovarianceSpec> {
    if p == 0 {
        return Err(invalid("dimension p must be at least 1"));
    }
    if !(rho.abs() < 1.0) {
        return Err(invalid(format!("AR(1) correlation must lie in (-1, 1), got {rho}")));
    }
    let sigma = DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
    finish(CovarianceKind::Ar1 { p, rho }, sigma)
}

/// Random correlation matrix: `B = Uᵀ diag(λ) U` with Haar-distributed `U`
/// and `λ_i ~ χ²(df)`, rescaled to unit diagonal.
pub fn build_random_correlation(p: usize, df: u32, seed: u64) -> Result<CovarianceSpec> {
    if p < 2 {
        return Err(invalid("random correlation needs p >= 2"));
    }
    if df == 0 {
        return Err(invalid("degrees of freedom must be positive"));
    }
    let chi = ChiSquared::new(df as f64).map_err(|e| invalid(e.to_string()))?;
    let mut last_err = None;
    for attempt in 0..=MAX_RESAMPLES {
        let mut rng = substream(seed, purpose::RANDOM_CORRELATION, attempt);
        let g = DMatrix::<f64>::from_fn(p, p, |_, _| StandardNormal.sample(&mut rng));
        let qr = g.qr();
        let r_diag = qr.r().diagonal();
        let mut u = qr.q();
        for (j, d) in r_diag.iter().enumerate() {
            if *d < 0.0 {
                u.column_mut(j).neg_mut();
            }
        }
        let lambda = DVector::<f64>::from_fn(p, |_, _| chi.sample(&mut rng));
        let b: DMatrix<f64> = u.transpose() * DMatrix::from_diagonal(&lambda) * &u;
        let d: Vec<f64> = b.diagonal().iter().map(|v| 1.0 / v.sqrt()).collect();
        let mut sigma = DMatrix::from_fn(p, p, |i, j| b[(i, j)] * d[i] * d[j]);
        for i in 0..p {
            sigma[(i, i)] = 1.0;
            for j in 0..i {
                let avg = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
                sigma[(i, j)] = avg;
                sigma[(j, i)] = avg;
            }
        }
        match finish(CovarianceKind::RandomCorrelation { p, df, seed }, sigma) {
            Ok(spec) => return Ok(spec),
            Err(e) => {
                log::warn!("random correlation draw {attempt} rejected: {e}");
                last_err = Some(e);
            }
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Wraps a user-supplied covariance matrix.
pub fn from_matrix(sigma: DMatrix<f64>) -> Result<CovarianceSpec> {
    let p = sigma.nrows();
    if p == 0 || sigma.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "covariance must be square, got {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let scale = sigma.amax().max(f64::MIN_POSITIVE);
    let mut sym = sigma;
    for i in 0..p {
        for j in 0..i {
            if (sym[(i, j)] - sym[(j, i)]).abs() > 1e-12 * scale {
                return Err(invalid(format!("covariance is not symmetric at ({i}, {j})")));
            }
            let avg = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = avg;
            sym[(j, i)] = avg;
        }
    }
    finish(CovarianceKind::Explicit { p }, sym)
}

impl CovarianceSpec {
    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }

    /// `τ_j = Θ_jj^{-1/2}`, the conditional standard deviation of covariate
    /// `j` given all others.
    pub fn conditional_sd(&self) -> Vec<f64> {
        self.theta_diag.iter().map(|t| 1.0 / t.sqrt()).collect()
    }

    /// `τ(v) = (vᵀ Θ v)^{-1/2}` for a unit vector `v`.
    pub fn tau_of_direction(&self, v: &DVector<f64>) -> Result<f64> {
        if v.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "direction has length {}, expected {}",
                v.len(),
                self.p()
            )));
        }
        if (v.norm() - 1.0).abs() > 1e-8 {
            return Err(invalid(format!("direction must be unit norm, got {}", v.norm())));
        }
        let w = self
            .chol
            .solve_lower_triangular(v)
            .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
        Ok(1.0 / w.norm())
    }

    /// The `S × S` block of `Θ = Σ⁻¹`.
    pub fn schur_precision_block(&self, s: &[usize]) -> Result<DMatrix<f64>> {
        let p = self.p();
        let mut seen = vec![false; p];
        for &j in s {
            if j >= p {
                return Err(invalid(format!("index {j} out of range for p = {p}")));
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(invalid(format!("duplicate index {j}")));
            }
        }
        let mut e = DMatrix::zeros(p, s.len());
        for (c, &j) in s.iter().enumerate() {
            e[(j, c)] = 1.0;
        }
        let w = self
            .chol
            .solve_lower_triangular(&e)
            .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
        Ok(w.transpose() * w)
    }

    /// `βᵀ Σ β`.
    pub fn quadratic_form(&self, beta: &DVector<f64>) -> f64 {
        beta.dot(&(&self.sigma * beta))
    }
}

/// `n × p` design with i.i.d. `N(0, Σ)` rows.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>) -> Self {
        Self { x }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Draws `n` rows `L z`. Standard normals are consumed row by row, so the
/// first `m` rows of an `n`-row draw equal an `m`-row draw from the same
/// stream.
pub fn sample_design<R: Rng + ?Sized>(n: usize, spec: &CovarianceSpec, rng: &mut R) -> DesignMatrix {
    let p = spec.p();
    let mut z = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let x = match spec.kind {
        CovarianceKind::Identity { .. } => z,
        CovarianceKind::Ar1 { rho, .. } => {
            let s = (1.0 - rho * rho).sqrt();
            for j in 1..p {
                for i in 0..n {
                    z[(i, j)] = rho * z[(i, j - 1)] + s * z[(i, j)];
                }
            }
            z
        }
        _ => {
            let mut x = DMatrix::<f64>::zeros(n, p);
            x.gemm(1.0, &z, &spec.chol.transpose(), 0.0);
            x
        }
    };
    DesignMatrix { x }
}

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::inference::fmt_num;
use crate::special::KsTest;
use crate::theory::FixedPoint;
use crate::{Error, Result};

/// Everything measured on one replicate. Fields for outputs that were not
/// requested stay empty.
#[derive(Debug, Clone, Default)]
pub(crate) struct Record {
    pub failure: Option<String>,
    pub iterations: usize,
    pub gamma_hat: Option<f64>,
    pub beta_hat_marginal: Option<f64>,
    pub t_true: Option<f64>,
    pub t_est: Option<f64>,
    pub cover_true: Vec<bool>,
    pub cover_est: Vec<bool>,
    pub cover_classical: Vec<bool>,
    pub bulk_true: Vec<f64>,
    pub bulk_est: Vec<f64>,
    pub p_wald: Option<f64>,
    pub p_t_true: Option<f64>,
    pub p_t_est: Option<f64>,
    pub llr: Option<f64>,
    pub p_lrt_classical: Option<f64>,
    pub p_lrt_true: Option<f64>,
    pub p_lrt_est: Option<f64>,
    pub lrt_stat_true: Option<f64>,
    pub lrt_stat_est: Option<f64>,
    pub alpha_n: Option<f64>,
    pub sigma2_n: Option<f64>,
    pub sphere: Vec<f64>,
    pub sphere_norm_error: Option<f64>,
}

/// An empirical proportion with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub proportion: f64,
    pub se: f64,
}

impl Proportion {
    pub(crate) fn from_flags(flags: impl IntoIterator<Item = bool>) -> Self {
        let (mut hits, mut total) = (0usize, 0usize);
        for f in flags {
            hits += f as usize;
            total += 1;
        }
        if total == 0 {
            return Self {
                proportion: f64::NAN,
                se: f64::NAN,
            };
        }
        let p = hits as f64 / total as f64;
        Self {
            proportion: p,
            se: (p * (1.0 - p) / total as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheorySummary {
    pub kappa: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl From<&FixedPoint> for TheorySummary {
    fn from(fp: &FixedPoint) -> Self {
        Self {
            kappa: fp.inputs.kappa,
            gamma: fp.inputs.gamma,
            alpha: fp.alpha_star,
            sigma: fp.sigma_star,
            lambda: fp.lambda_star,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageRow {
    pub level: f64,
    #[serde(rename = "true")]
    pub true_params: Proportion,
    pub estimated: Option<Proportion>,
    pub classical: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalSummary {
    pub coordinate: usize,
    pub beta: f64,
    /// Mean and standard deviation of `T_j` under the true parameters.
    pub t_mean: f64,
    pub t_sd: f64,
    pub rows: Vec<CoverageRow>,
    /// Largest `|empirical − normal quantile|` over the central 98% of the
    /// QQ pairs.
    pub qq_max_deviation: f64,
    #[serde(skip)]
    pub qq: Vec<(f64, f64)>,
}

/// Across-replicate mean, standard deviation and standard error of the
/// fraction of covered coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BulkCell {
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BulkRow {
    pub level: f64,
    #[serde(rename = "true")]
    pub true_params: BulkCell,
    pub estimated: Option<BulkCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BulkSummary {
    pub rows: Vec<BulkRow>,
}

/// `P(p-value ≤ cutoff)` per column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub cutoff: f64,
    pub estimated: Option<Proportion>,
    #[serde(rename = "true")]
    pub true_params: Proportion,
    pub classical: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PvalueSummary {
    pub coordinate: usize,
    pub replicates: usize,
    pub rows: Vec<TailRow>,
    /// Adjusted t p-values (true parameters) against the uniform law.
    pub ks_true: KsTest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrtSummary {
    pub coordinate: usize,
    pub replicates: usize,
    pub rows: Vec<TailRow>,
    /// Rescaled statistic `(λ/(κσ²))·2·LLR` against `χ²₁`.
    pub ks_true: KsTest,
    pub ks_estimated: Option<KsTest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub replicates: usize,
    pub alpha_mean: f64,
    pub alpha_se: f64,
    pub alpha_star: f64,
    pub sigma2_mean: f64,
    pub sigma2_se: f64,
    /// `κσ⋆²`, the limit of `σ(n)²`.
    pub kappa_sigma_star2: f64,
}

impl ConvergenceSummary {
    pub fn alpha_relative_error(&self) -> f64 {
        (self.alpha_mean - self.alpha_star).abs() / self.alpha_star
    }

    pub fn sigma2_relative_error(&self) -> f64 {
        (self.sigma2_mean - self.kappa_sigma_star2).abs() / self.kappa_sigma_star2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SphereSummary {
    pub replicates: usize,
    pub p: usize,
    pub max_norm_error: f64,
    /// `3/√replicates`.
    pub band: f64,
    pub max_abs_mean: f64,
    /// Share of coordinates whose mean of `√p·u_j` leaves the band.
    pub fraction_outside_band: f64,
    /// Cross-replicate correlation of the second and third coordinates.
    pub corr_u2_u3: f64,
    #[serde(skip)]
    pub coordinate_means: Vec<f64>,
    #[serde(skip)]
    pub coordinate_sds: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaHatSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub kappa: f64,
    /// `√(βᵀΣβ)` of the drawn coefficients.
    pub gamma: f64,
    pub theory: TheorySummary,
    /// Present when a fixed `γ̂` was configured.
    pub theory_estimated: Option<TheorySummary>,
    pub gamma_hat: Option<GammaHatSummary>,
    pub replicates: usize,
    pub completed: usize,
    pub failures: BTreeMap<String, usize>,
    /// More than 1% of the replicates failed.
    pub flagged: bool,
    pub marginal: Option<MarginalSummary>,
    pub bulk: Option<BulkSummary>,
    pub pvalue: Option<PvalueSummary>,
    pub lrt: Option<LrtSummary>,
    pub convergence: Option<ConvergenceSummary>,
    pub sphere: Option<SphereSummary>,
    #[serde(skip)]
    pub(crate) records: Vec<Record>,
}

pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn prop_cells(p: &Proportion) -> [String; 2] {
    [fmt_num(p.proportion), fmt_num(p.se)]
}

struct Csv {
    path: PathBuf,
    w: std::io::BufWriter<std::fs::File>,
}

impl Csv {
    fn create(dir: &Path, name: &str) -> Result<Self> {
        let path = dir.join(name);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            w: std::io::BufWriter::new(file),
        })
    }

    fn row<S: AsRef<str>>(&mut self, cells: impl IntoIterator<Item = S>) -> Result<()> {
        let line = cells
            .into_iter()
            .map(|c| c.as_ref().to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(self.w, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

impl ExperimentResult {
    /// Writes `summary.json` and one CSV per requested output into `dir`,
    /// returning the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let summary = dir.join("summary.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&summary, text + "\n").map_err(|e| Error::io(&summary, e))?;
        written.push(summary);

        if let Some(m) = &self.marginal {
            let est = m.rows.first().is_some_and(|r| r.estimated.is_some());
            let mut csv = Csv::create(dir, "coverage.csv")?;
            let mut header = vec!["level", "true", "true_se"];
            if est {
                header.extend(["estimated", "estimated_se"]);
            }
            header.extend(["classical", "classical_se"]);
            csv.row(header)?;
            for r in &m.rows {
                let mut cells = vec![fmt_num(r.level)];
                cells.extend(prop_cells(&r.true_params));
                if let Some(e) = &r.estimated {
                    cells.extend(prop_cells(e));
                }
                cells.extend(prop_cells(&r.classical));
                csv.row(cells)?;
            }
            written.push(csv.finish()?);
            let mut qq = Csv::create(dir, "qq.csv")?;
            qq.row(["theoretical", "empirical"])?;
            for (t, e) in &m.qq {
                qq.row([fmt_num(*t), fmt_num(*e)])?;
            }
            written.push(qq.finish()?);
        }

        if let Some(b) = &self.bulk {
            let est = b.rows.first().is_some_and(|r| r.estimated.is_some());
            let mut csv = Csv::create(dir, "bulk.csv")?;
            let mut header = vec!["level", "true_mean", "true_sd", "true_se"];
            if est {
                header.extend(["estimated_mean", "estimated_sd", "estimated_se"]);
            }
            csv.row(header)?;
            for r in &b.rows {
                let mut cells = vec![fmt_num(r.level)];
                for c in std::iter::once(&r.true_params).chain(r.estimated.as_ref()) {
                    cells.extend([fmt_num(c.mean), fmt_num(c.sd), fmt_num(c.se)]);
                }
                csv.row(cells)?;
            }
            written.push(csv.finish()?);
        }

        let tails = [
            ("pvalue.csv", self.pvalue.as_ref().map(|s| &s.rows)),
            ("lrt.csv", self.lrt.as_ref().map(|s| &s.rows)),
        ];
        for (name, rows) in tails {
            let Some(rows) = rows else { continue };
            let est = rows.first().is_some_and(|r| r.estimated.is_some());
            let mut csv = Csv::create(dir, name)?;
            let mut header = vec!["cutoff"];
            if est {
                header.extend(["estimated", "estimated_se"]);
            }
            header.extend(["true", "true_se", "classical", "classical_se"]);
            csv.row(header)?;
            for r in rows {
                let mut cells = vec![fmt_num(r.cutoff)];
                if let Some(e) = &r.estimated {
                    cells.extend(prop_cells(e));
                }
                cells.extend(prop_cells(&r.true_params));
                cells.extend(prop_cells(&r.classical));
                csv.row(cells)?;
            }
            written.push(csv.finish()?);
        }

        if let Some(s) = &self.sphere {
            let mut csv = Csv::create(dir, "sphere.csv")?;
            csv.row(["j", "mean", "sd"])?;
            for (j, (m, sd)) in s.coordinate_means.iter().zip(&s.coordinate_sds).enumerate() {
                csv.row([j.to_string(), fmt_num(*m), fmt_num(*sd)])?;
            }
            written.push(csv.finish()?);
        }

        written.push(self.write_replicates(dir)?);
        Ok(written)
    }

    fn write_replicates(&self, dir: &Path) -> Result<PathBuf> {
        let mut csv = Csv::create(dir, "replicates.csv")?;
        csv.row([
            "rep",
            "status",
            "iterations",
            "gamma_hat",
            "beta_hat",
            "t_true",
            "t_estimated",
            "p_wald",
            "p_t_true",
            "p_t_estimated",
            "llr",
            "p_lrt_classical",
            "p_lrt_true",
            "p_lrt_estimated",
            "alpha_n",
            "sigma2_n",
        ])?;
        for (r, rec) in self.records.iter().enumerate() {
            csv.row([
                r.to_string(),
                rec.failure.clone().unwrap_or_else(|| "ok".into()),
                rec.iterations.to_string(),
                opt(rec.gamma_hat),
                opt(rec.beta_hat_marginal),
                opt(rec.t_true),
                opt(rec.t_est),
                opt(rec.p_wald),
                opt(rec.p_t_true),
                opt(rec.p_t_est),
                opt(rec.llr),
                opt(rec.p_lrt_classical),
                opt(rec.p_lrt_true),
                opt(rec.p_lrt_est),
                opt(rec.alpha_n),
                opt(rec.sigma2_n),
            ])?;
        }
        csv.finish()
    }
}

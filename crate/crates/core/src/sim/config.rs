use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::designs::CovarianceDescriptor;
use crate::error::invalid;
use crate::logistic::FitOptions;
use crate::probe::ProbeConfig;
use crate::{Error, Result};

/// How the true coefficient vector is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaScheme {
    Zero,
    /// Half of the coordinates, chosen at random, share one positive magnitude
    /// scaled so that `βᵀΣβ = gamma2`.
    HalfNonnullEqual,
    /// `β = c·e₁` with `c²Σ₁₁ = gamma2`.
    SingleSpike,
    /// Used as given; `gamma2` is ignored.
    Explicit(Vec<f64>),
}

/// Where `(α, σ, λ)` come from in the estimated columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterMode {
    /// Solved at the true signal strength.
    #[default]
    True,
    /// Solved at `γ̂` from the configured value or from probing each replicate.
    Probefrontier,
    /// Unadjusted: `α = 1` with the inverse-information standard error.
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauMode {
    #[default]
    True,
    Rss,
    Ar1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Marginal,
    Bulk,
    Pvalue,
    Lrt,
    Convergence,
    Sphere,
}

/// Which kind of coordinate the marginal study follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tracked {
    Nonnull,
    Null,
}

/// Monte-Carlo frontier used when `γ̂` has to be probed per replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierSettings {
    #[serde(default = "default_frontier_grid")]
    pub kappa_grid: Vec<f64>,
    #[serde(default = "default_frontier_n")]
    pub n: usize,
    #[serde(default = "default_frontier_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
}

pub fn default_frontier_grid() -> Vec<f64> {
    (4..=10).map(|k| k as f64 * 0.05).collect()
}

fn default_frontier_n() -> usize {
    1000
}

fn default_frontier_reps() -> usize {
    200
}

impl Default for FrontierSettings {
    fn default() -> Self {
        Self {
            kappa_grid: default_frontier_grid(),
            n: default_frontier_n(),
            reps: default_frontier_reps(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: usize,
    pub covariance: CovarianceDescriptor,
    pub beta_scheme: BetaScheme,
    #[serde(default)]
    pub gamma2: f64,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub parameter_mode: ParameterMode,
    #[serde(default)]
    pub tau_mode: TauMode,
    pub outputs: Vec<OutputKind>,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<f64>,
    /// Defaults to a non-null coordinate when there is one.
    #[serde(default)]
    pub tracked: Option<Tracked>,
    /// Fixed `γ̂` for `probefrontier`; probed per replicate when absent.
    #[serde(default)]
    pub gamma_hat: Option<f64>,
    /// Compute likelihood ratios only for the first this many replicates.
    #[serde(default)]
    pub lrt_replicates: Option<usize>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub frontier: FrontierSettings,
    #[serde(default)]
    pub fit: FitOptions,
}

pub fn default_levels() -> Vec<f64> {
    vec![0.99, 0.98, 0.95, 0.90, 0.80]
}

pub fn default_cutoffs() -> Vec<f64> {
    vec![0.10, 0.05, 0.01, 0.005]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn kappa(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    pub fn wants(&self, kind: OutputKind) -> bool {
        self.outputs.contains(&kind)
    }

    /// Whether the tables carry a column besides the true-parameter and
    /// classical ones.
    pub fn has_estimated_column(&self) -> bool {
        self.parameter_mode == ParameterMode::Probefrontier
            || (self.parameter_mode == ParameterMode::True && self.tau_mode != TauMode::True)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.p == 0 {
            return bad("p", "must be at least 1".into());
        }
        if self.p >= self.n {
            return bad("p", format!("need p < n, got p = {}, n = {}", self.p, self.n));
        }
        if let Some(cp) = self.covariance.p() {
            if cp != self.p {
                return bad("covariance", format!("dimension {cp} does not match p = {}", self.p));
            }
        }
        if !(self.gamma2 >= 0.0 && self.gamma2.is_finite()) {
            return bad("gamma2", format!("must be finite and >= 0, got {}", self.gamma2));
        }
        if let BetaScheme::Explicit(b) = &self.beta_scheme {
            if b.len() != self.p {
                return bad(
                    "beta_scheme",
                    format!("explicit vector has length {}, expected {}", b.len(), self.p),
                );
            }
            if b.iter().any(|v| !v.is_finite()) {
                return bad("beta_scheme", "explicit vector has non-finite entries".into());
            }
        }
        if self.replicates == 0 {
            return bad("replicates", "must be at least 1".into());
        }
        if self.outputs.is_empty() {
            return bad("outputs", "request at least one output".into());
        }
        if let Some(l) = self.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return bad("levels", format!("each level must lie in (0, 1), got {l}"));
        }
        if let Some(c) = self.cutoffs.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
            return bad("cutoffs", format!("each cutoff must lie in (0, 1), got {c}"));
        }
        if let Some(g) = self.gamma_hat {
            if !(g >= 0.0 && g.is_finite()) {
                return bad("gamma_hat", format!("must be finite and >= 0, got {g}"));
            }
        }
        if self.lrt_replicates == Some(0) {
            return bad("lrt_replicates", "must be at least 1".into());
        }
        if self.wants(OutputKind::Convergence)
            && self.gamma2 == 0.0
            && !matches!(self.beta_scheme, BetaScheme::Explicit(_))
        {
            return bad("gamma2", "convergence diagnostics need a nonzero signal".into());
        }
        if self.frontier.n == 0 || self.frontier.reps == 0 {
            return bad("frontier", "n and reps must be positive".into());
        }
        Ok(())
    }
}

/// Paths and caches outside the config itself.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory that relative paths in the config are resolved against.
    pub base_dir: Option<PathBuf>,
    /// Where frontier curves are cached; the system temp dir when absent.
    pub cache_dir: Option<PathBuf>,
}

impl RunOptions {
    pub(crate) fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| std::env::temp_dir().join("hdlogit-cache"))
    }
}

pub(crate) fn check_gamma(g: f64) -> Result<()> {
    if g > 0.0 {
        Ok(())
    } else {
        Err(invalid("diagnostic needs gamma > 0"))
    }
}

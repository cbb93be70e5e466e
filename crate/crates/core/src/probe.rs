//! Signal-strength estimation by subsampling to separability.
//!
//! Fewer observations make complete separation more likely. The ratio
//! `κ' = p/n'` at which half of the subsamples become separable is read off
//! and mapped through the existence frontier to an estimate `γ̂`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::logistic::{check_separable, Labels};
use crate::rng::{purpose, substream};
use crate::theory::{solve_fixed_point, FixedPoint, FrontierCurve, TheoryInputs};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Candidate ratios, strictly increasing and above the data's own `p/n`.
    /// `None` means `p/n + 0.02, p/n + 0.04, …` up to 0.5.
    #[serde(default)]
    pub kappa_grid: Option<Vec<f64>>,
    #[serde(default = "default_resamples")]
    pub resamples_per_kappa: usize,
    #[serde(default = "default_target")]
    pub crossing_target: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_resamples() -> usize {
    10
}

fn default_target() -> f64 {
    0.5
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kappa_grid: None,
            resamples_per_kappa: default_resamples(),
            crossing_target: default_target(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub kappa_hat: f64,
    pub gamma_hat: f64,
    pub kappa_grid: Vec<f64>,
    pub separability_fractions: Vec<f64>,
}

/// `κ₀ + 0.02, κ₀ + 0.04, …` up to 0.5.
pub fn default_grid(kappa0: f64) -> Vec<f64> {
    (1..)
        .map(|k| ((kappa0 + 0.02 * k as f64) * 1e9).round() / 1e9)
        .take_while(|k| *k <= 0.5 + 1e-12)
        .collect()
}

fn validate(cfg: &ProbeConfig, kappa0: f64) -> Result<Vec<f64>> {
    let grid = cfg.kappa_grid.clone().unwrap_or_else(|| default_grid(kappa0));
    if grid.is_empty() {
        return Err(invalid("probe grid is empty"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("probe grid must be strictly increasing"));
    }
    if grid[0] <= kappa0 {
        return Err(invalid(format!("probe grid must start above p/n = {kappa0}")));
    }
    if grid[grid.len() - 1] >= 0.55 {
        return Err(invalid("probe grid must stay below 0.55"));
    }
    if cfg.resamples_per_kappa == 0 {
        return Err(invalid("resamples_per_kappa must be at least 1"));
    }
    if !(cfg.crossing_target > 0.0 && cfg.crossing_target < 1.0) {
        return Err(invalid("crossing_target must lie in (0, 1)"));
    }
    Ok(grid)
}

/// Index of the first grid point at which the nested subsample of one
/// resample is separable, or `grid.len()` if none is.
///
/// Subsamples for larger `κ'` are prefixes of the same permutation, hence
/// subsets of those for smaller `κ'`. Separability is inherited by subsets,
/// so a binary search over the grid decides every point.
fn first_separable(x: &DMatrix<f64>, y: &Labels, sizes: &[usize], perm: &[usize]) -> Result<usize> {
    let separable_at = |k: usize| -> Result<bool> {
        let rows = &perm[..sizes[k]];
        let xs = x.select_rows(rows);
        match check_separable(&xs, &y.subset(rows)) {
            Ok(r) => Ok(r.separable),
            Err(Error::Indeterminate(msg)) => {
                log::warn!(
                    "probe subsample of size {} undecided ({msg}); counted as separable",
                    sizes[k]
                );
                Ok(true)
            }
            Err(e) => Err(e),
        }
    };
    let (mut lo, mut hi) = (0, sizes.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if separable_at(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// Non-decreasing least-squares fit (pool adjacent violators).
fn increasing_isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, k)| std::iter::repeat_n(v, k))
        .collect()
}

/// Estimates `γ` from a single dataset.
pub fn probe(x: &DMatrix<f64>, y: &Labels, cfg: &ProbeConfig, curve: &FrontierCurve) -> Result<ProbeResult> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} labels", y.len())));
    }
    let kappa0 = p as f64 / n as f64;
    let grid = validate(cfg, kappa0)?;
    if check_separable(x, y)?.separable {
        return Err(Error::SeparableData);
    }
    let sizes: Vec<usize> = grid.iter().map(|k| ((p as f64 / k).round() as usize).min(n)).collect();
    let thresholds = (0..cfg.resamples_per_kappa as u64)
        .into_par_iter()
        .map(|r| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut substream(cfg.seed, purpose::PROBE, r));
            first_separable(x, y, &sizes, &perm)
        })
        .collect::<Result<Vec<usize>>>()?;
    let reps = thresholds.len() as f64;
    let raw: Vec<f64> = (0..grid.len())
        .map(|k| thresholds.iter().filter(|&&t| t <= k).count() as f64 / reps)
        .collect();
    let fractions = increasing_isotonic(&raw);
    let target = cfg.crossing_target;
    let k = fractions
        .iter()
        .position(|f| *f >= target)
        .ok_or(Error::ProbeGridExhausted)?;
    let (k0, f0) = if k == 0 {
        (kappa0, 0.0)
    } else {
        (grid[k - 1], fractions[k - 1])
    };
    let kappa_hat = k0 + (target - f0) / (fractions[k] - f0) * (grid[k] - k0);
    let gamma_hat = curve.gamma_at(kappa_hat)?;
    Ok(ProbeResult {
        kappa_hat,
        gamma_hat,
        kappa_grid: grid,
        separability_fractions: fractions,
    })
}

/// Fixed-point parameters at the data's own `κ = p/n` and the probed `γ̂`.
pub fn estimate_theory_params(kappa: f64, gamma_hat: f64) -> Result<FixedPoint> {
    solve_fixed_point(TheoryInputs::new(kappa, gamma_hat)?)
}

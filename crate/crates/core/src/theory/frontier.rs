//! Monte-Carlo estimate of the existence frontier `κ ↦ g_MLE(κ)`.
//!
//! A knot is the signal strength at which complete separation of an
//! i.i.d.-Gaussian design with `p = κn` happens with probability 1/2. The
//! frontier does not depend on the covariance, so identity designs with all
//! signal in the first coordinate are used.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fixed_point::TheoryInputs;
use crate::error::invalid;
use crate::logistic::{check_separable, sigmoid, Labels};
use crate::rng::{derive_seed, purpose, substream};
use crate::{Error, Result};

pub const FRONTIER_SCHEMA: &str = "hdlogit.frontier.v1";

const BISECTION_WIDTH: f64 = 0.05;
const MAX_GAMMA: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierKnot {
    pub kappa: f64,
    pub gamma: f64,
    pub n: usize,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotFailure {
    pub kappa: f64,
    pub reason: String,
}

/// Piecewise-linear frontier through strictly decreasing knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierCurve {
    pub schema: String,
    pub seed: u64,
    pub n: usize,
    pub reps: usize,
    pub grid_hash: String,
    pub knots: Vec<FrontierKnot>,
    #[serde(default)]
    pub failures: Vec<KnotFailure>,
}

impl FrontierCurve {
    /// Curve through the given `(κ, γ)` pairs, which must be strictly
    /// increasing in `κ` and strictly decreasing in `γ`.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        let curve = Self {
            schema: FRONTIER_SCHEMA.into(),
            seed: 0,
            n: 0,
            reps: 0,
            grid_hash: grid_hash(&points.iter().map(|p| p.0).collect::<Vec<_>>()),
            knots: points
                .iter()
                .map(|&(kappa, gamma)| FrontierKnot {
                    kappa,
                    gamma,
                    n: 0,
                    reps: 0,
                })
                .collect(),
            failures: Vec::new(),
        };
        curve.validate()?;
        Ok(curve)
    }

    fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::Frontier("curve has no knots".into()));
        }
        for w in self.knots.windows(2) {
            if !(w[1].kappa > w[0].kappa && w[1].gamma < w[0].gamma) {
                return Err(Error::Frontier(format!(
                    "knots must be increasing in kappa and decreasing in gamma: ({}, {}) then ({}, {})",
                    w[0].kappa, w[0].gamma, w[1].kappa, w[1].gamma
                )));
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0].kappa, self.knots[self.knots.len() - 1].kappa)
    }

    /// Linear interpolation of the frontier at `kappa`.
    pub fn gamma_at(&self, kappa: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !(kappa >= lo && kappa <= hi) {
            return Err(Error::Frontier(format!(
                "kappa = {kappa} lies outside the frontier domain [{lo}, {hi}]"
            )));
        }
        let i = self.knots.partition_point(|k| k.kappa < kappa);
        let b = &self.knots[i];
        if b.kappa == kappa || i == 0 {
            return Ok(b.gamma);
        }
        let a = &self.knots[i - 1];
        let t = (kappa - a.kappa) / (b.kappa - a.kappa);
        Ok(a.gamma + t * (b.gamma - a.gamma))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let curve: Self = serde_json::from_str(&text)?;
        if curve.schema != FRONTIER_SCHEMA {
            return Err(Error::Frontier(format!(
                "{}: unsupported schema {:?}",
                path.display(),
                curve.schema
            )));
        }
        curve.validate()?;
        Ok(curve)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

/// Whether the MLE exists asymptotically: `γ < g_MLE(κ)`, strictly.
pub fn exists_mle(inputs: TheoryInputs, curve: &FrontierCurve) -> Result<bool> {
    Ok(inputs.gamma < curve.gamma_at(inputs.kappa)?)
}

fn grid_hash(kappas: &[f64]) -> String {
    // FNV-1a over the bit patterns.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for k in kappas {
        for byte in k.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

fn rep_is_separable(kappa: f64, gamma: f64, n: usize, seed: u64, rep: u64) -> Result<bool> {
    let p = (kappa * n as f64).round() as usize;
    let mut rng = substream(seed, purpose::FRONTIER, rep);
    let mut x = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    // One uniform per row; the same draws serve every γ (common random
    // numbers), which keeps the bisection below well behaved.
    let y = Labels::from_bools((0..n).map(|i| rng.random::<f64>() < sigmoid(gamma * x[(i, 0)])));
    match check_separable(&x, &y) {
        Ok(report) => Ok(report.separable),
        Err(Error::Indeterminate(msg)) => {
            // Undecidable instances are boundary cases where the MLE does not
            // exist in any useful sense either.
            log::warn!("frontier rep {rep} at kappa = {kappa}, gamma = {gamma}: {msg}; counted as separable");
            Ok(true)
        }
        Err(e) => Err(e),
    }
}

/// Fraction of `reps` simulated datasets at `(κ, γ)` that are completely
/// separable.
pub fn mc_separability_prob(kappa: f64, gamma: f64, n: usize, reps: usize, seed: u64) -> Result<f64> {
    if reps == 0 {
        return Err(invalid("reps must be at least 1"));
    }
    if !(kappa > 0.0 && kappa < 1.0) || kappa * (n as f64) < 2.0 {
        return Err(invalid(format!(
            "need 0 < kappa < 1 and kappa * n >= 2, got kappa = {kappa}, n = {n}"
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    let flags = (0..reps as u64)
        .into_par_iter()
        .map(|r| rep_is_separable(kappa, gamma, n, seed, r))
        .collect::<Result<Vec<bool>>>()?;
    Ok(flags.iter().filter(|s| **s).count() as f64 / reps as f64)
}

fn knot_gamma(kappa: f64, n: usize, reps: usize, seed: u64) -> std::result::Result<f64, String> {
    let prob = |g: f64| mc_separability_prob(kappa, g, n, reps, seed).map_err(|e| e.to_string());
    if prob(0.0)? >= 0.5 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while prob(hi)? < 0.5 {
        lo = hi;
        hi *= 2.0;
        if hi > MAX_GAMMA {
            return Err(format!(
                "separation probability stays below 1/2 up to gamma = {MAX_GAMMA}"
            ));
        }
    }
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        if prob(mid)? >= 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Pool-adjacent-violators fit of a non-increasing sequence.
fn decreasing_isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a >= b {
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

/// Estimates the frontier at each `κ` in `kappas` by bisection on `γ` until
/// the bracket is narrower than 0.05. Knots whose bisection fails are
/// reported in `failures` and left out.
pub fn build_frontier(kappas: &[f64], n: usize, reps: usize, seed: u64) -> Result<FrontierCurve> {
    if kappas.is_empty() {
        return Err(invalid("kappa grid is empty"));
    }
    if kappas.iter().any(|k| !(*k > 0.0 && *k <= 0.5)) {
        return Err(invalid("kappa grid must lie in (0, 0.5]"));
    }
    if kappas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("kappa grid must be strictly increasing"));
    }
    let mut found = Vec::new();
    let mut failures = Vec::new();
    for &kappa in kappas {
        let knot_seed = derive_seed(seed, purpose::FRONTIER, kappa.to_bits());
        match knot_gamma(kappa, n, reps, knot_seed) {
            Ok(gamma) => {
                log::info!("frontier knot kappa = {kappa}: gamma = {gamma:.4}");
                found.push((kappa, gamma));
            }
            Err(reason) => {
                log::warn!("frontier knot kappa = {kappa} skipped: {reason}");
                failures.push(KnotFailure { kappa, reason });
            }
        }
    }
    let smoothed = decreasing_isotonic(&found.iter().map(|k| k.1).collect::<Vec<_>>());
    let mut knots: Vec<FrontierKnot> = Vec::new();
    for (&(kappa, _), &gamma) in found.iter().zip(&smoothed) {
        let gamma = match knots.last() {
            Some(prev) if gamma >= prev.gamma => prev.gamma - 1e-9 * (1.0 + prev.gamma),
            _ => gamma,
        };
        if gamma < 0.0 {
            failures.push(KnotFailure {
                kappa,
                reason: "frontier already reached gamma = 0 at a smaller kappa".into(),
            });
            continue;
        }
        knots.push(FrontierKnot { kappa, gamma, n, reps });
    }
    let curve = FrontierCurve {
        schema: FRONTIER_SCHEMA.into(),
        seed,
        n,
        reps,
        grid_hash: grid_hash(kappas),
        knots,
        failures,
    };
    curve.validate()?;
    Ok(curve)
}

/// Cache file for a frontier build inside `dir`.
pub fn frontier_cache_path(dir: &Path, kappas: &[f64], n: usize, reps: usize, seed: u64) -> PathBuf {
    dir.join(format!("frontier-n{n}-r{reps}-g{}-s{seed}.json", grid_hash(kappas)))
}

/// Loads a cached frontier for this configuration from `dir`, building and
/// caching it when absent or stale.
pub fn load_or_build_frontier(dir: &Path, kappas: &[f64], n: usize, reps: usize, seed: u64) -> Result<FrontierCurve> {
    let path = frontier_cache_path(dir, kappas, n, reps, seed);
    if path.exists() {
        match FrontierCurve::load(&path) {
            Ok(c) if c.n == n && c.reps == reps && c.seed == seed && c.grid_hash == grid_hash(kappas) => return Ok(c),
            Ok(_) => log::warn!("{} does not match the requested build; rebuilding", path.display()),
            Err(e) => log::warn!("ignoring unreadable frontier cache: {e}"),
        }
    }
    let curve = build_frontier(kappas, n, reps, seed)?;
    curve.save(&path)?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_and_domain() {
        let c = FrontierCurve::from_points(&[(0.1, 6.0), (0.2, 4.0), (0.4, 1.0)]).unwrap();
        assert_eq!(c.gamma_at(0.1).unwrap(), 6.0);
        assert!((c.gamma_at(0.15).unwrap() - 5.0).abs() < 1e-12);
        assert!((c.gamma_at(0.3).unwrap() - 2.5).abs() < 1e-12);
        assert!(c.gamma_at(0.45).is_err());
        assert!(FrontierCurve::from_points(&[(0.1, 1.0), (0.2, 2.0)]).is_err());
    }

    #[test]
    fn existence_is_strict() {
        let c = FrontierCurve::from_points(&[(0.1, 6.0), (0.3, 2.0)]).unwrap();
        assert!(exists_mle(TheoryInputs::new(0.2, 5f64.sqrt()).unwrap(), &c).unwrap());
        assert!(!exists_mle(TheoryInputs::new(0.2, 100.0).unwrap(), &c).unwrap());
        assert!(!exists_mle(TheoryInputs::new(0.2, 4.0).unwrap(), &c).unwrap());
        assert!(exists_mle(TheoryInputs::new(0.4, 1.0).unwrap(), &c).is_err());
    }

    #[test]
    fn isotonic_fit() {
        assert_eq!(decreasing_isotonic(&[3.0, 4.0, 1.0]), vec![3.5, 3.5, 1.0]);
        assert_eq!(decreasing_isotonic(&[5.0, 2.0, 1.0]), vec![5.0, 2.0, 1.0]);
    }

    #[test]
    fn separability_probability_extremes() {
        assert!(mc_separability_prob(0.45, 10.0, 400, 20, 1).unwrap() >= 0.9);
        assert!(mc_separability_prob(0.05, 0.1, 400, 20, 1).unwrap() <= 0.1);
        let one = mc_separability_prob(0.2, 2.0, 100, 1, 3).unwrap();
        assert!(one == 0.0 || one == 1.0);
        assert!(mc_separability_prob(0.2, 2.0, 100, 0, 3).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = [0.3, 0.45];
        let a = load_or_build_frontier(dir.path(), &grid, 200, 10, 5).unwrap();
        let path = frontier_cache_path(dir.path(), &grid, 200, 10, 5);
        let bytes = std::fs::read(&path).unwrap();
        let b = load_or_build_frontier(dir.path(), &grid, 200, 10, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert!(a.knots.windows(2).all(|w| w[1].gamma < w[0].gamma));
    }
}

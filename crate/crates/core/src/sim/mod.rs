//! Seeded Monte-Carlo experiments: marginal and bulk coverage, p-value
//! calibration, convergence of the MLE summaries and sphere uniformity.
//!
//! Replicate `r` draws its design from `substream(seed, DESIGN, r)` and its
//! labels from `substream(seed, DATA, r)`; the coefficient vector comes from
//! `substream(seed, BETA, 0)` and is shared by all replicates. Results are
//! folded in replicate order, so they do not depend on the thread count.

mod config;
mod harness;
mod output;

pub use config::{
    default_cutoffs, default_frontier_grid, default_levels, BetaScheme, ExperimentConfig, FrontierSettings, OutputKind,
    ParameterMode, RunOptions, TauMode, Tracked,
};
pub use harness::{run_bulk, run_convergence_check, run_experiment, run_marginal, run_pvalue_study, run_sphere_check};
pub use output::{
    BulkCell, BulkRow, BulkSummary, ConvergenceSummary, CoverageRow, ExperimentResult, GammaHatSummary, LrtSummary,
    MarginalSummary, Proportion, PvalueSummary, SphereSummary, TailRow, TheorySummary,
};

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::designs::CovarianceSpec;
use crate::error::invalid;
use crate::{Error, Result};

/// A coefficient vector with the coordinates the studies follow.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaDraw {
    pub beta: DVector<f64>,
    /// First non-null coordinate in shuffled order.
    pub nonnull: Option<usize>,
    /// First null coordinate in shuffled order.
    pub null: Option<usize>,
}

/// Draws `β` for `scheme`; see [`draw_beta`] for the tracked coordinates.
pub fn make_beta<R: Rng + ?Sized>(
    scheme: &BetaScheme,
    spec: &CovarianceSpec,
    gamma2: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(draw_beta(scheme, spec, gamma2, rng)?.beta)
}

pub fn draw_beta<R: Rng + ?Sized>(
    scheme: &BetaScheme,
    spec: &CovarianceSpec,
    gamma2: f64,
    rng: &mut R,
) -> Result<BetaDraw> {
    if !(gamma2 >= 0.0 && gamma2.is_finite()) {
        return Err(invalid(format!("gamma2 must be finite and >= 0, got {gamma2}")));
    }
    let p = spec.p();
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(rng);
    let mut beta = DVector::zeros(p);
    match scheme {
        BetaScheme::Zero => {}
        BetaScheme::HalfNonnullEqual => {
            let support = &perm[..p / 2];
            if gamma2 > 0.0 {
                if support.is_empty() {
                    return Err(invalid("half scheme needs p >= 2 for a nonzero signal"));
                }
                let mass: f64 = support
                    .iter()
                    .map(|&i| support.iter().map(|&j| spec.sigma[(i, j)]).sum::<f64>())
                    .sum();
                let m = (gamma2 / mass).sqrt();
                for &i in support {
                    beta[i] = m;
                }
            }
        }
        BetaScheme::SingleSpike => {
            beta[0] = (gamma2 / spec.sigma[(0, 0)]).sqrt();
        }
        BetaScheme::Explicit(b) => {
            if b.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "explicit beta has length {}, expected {p}",
                    b.len()
                )));
            }
            beta.copy_from_slice(b);
        }
    }
    if !matches!(scheme, BetaScheme::Explicit(_) | BetaScheme::Zero) {
        let q = spec.quadratic_form(&beta);
        if (q - gamma2).abs() > 1e-10 * gamma2.max(1.0) {
            return Err(invalid(format!("signal strength {q} misses the target {gamma2}")));
        }
    }
    let nonnull = perm.iter().copied().find(|&i| beta[i] != 0.0);
    let null = perm.iter().copied().find(|&i| beta[i] == 0.0);
    Ok(BetaDraw { beta, nonnull, null })
}

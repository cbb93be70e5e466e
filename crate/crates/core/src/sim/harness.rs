use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::config::{
    check_gamma, BetaScheme, ExperimentConfig, OutputKind, ParameterMode, RunOptions, TauMode, Tracked,
};
use super::output::{
    mean_sd, median, BulkCell, BulkRow, BulkSummary, ConvergenceSummary, CoverageRow, ExperimentResult,
    GammaHatSummary, LrtSummary, MarginalSummary, Proportion, PvalueSummary, Record, SphereSummary, TailRow,
    TheorySummary,
};
use super::{draw_beta, BetaDraw};
use crate::designs::{sample_design, CovarianceDescriptor, CovarianceSpec};
use crate::inference::{
    adjusted_ci, ar1_conditional_sd, estimate_rho_ar1, estimate_tau_rss_all, estimate_tau_rss_at, lrt_pvalue, t_pvalue,
};
use crate::linalg::{cholesky_strict, inverse_diag_entry};
use crate::logistic::{fit_mle, information, llr_given_full, sample_labels, FitResult};
use crate::probe::{estimate_theory_params, probe};
use crate::rng::{derive_seed, purpose, substream};
use crate::special::{chi2_cdf, chi2_sf, ks_one_sample, normal_quantile, normal_sf};
use crate::theory::{load_or_build_frontier, solve_fixed_point, FixedPoint, FrontierCurve, TheoryInputs};
use crate::{Error, Result};

enum Estimate {
    None,
    Fixed(FixedPoint),
    Probe(FrontierCurve),
}

struct Plan<'a> {
    cfg: &'a ExperimentConfig,
    spec: CovarianceSpec,
    draw: BetaDraw,
    theta: DVector<f64>,
    kappa: f64,
    gamma: f64,
    tau_true: Vec<f64>,
    fp_true: FixedPoint,
    estimate: Estimate,
    marginal_j: Option<usize>,
    null_j: Option<usize>,
}

/// Runs every output requested by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    let plan = plan(cfg, opts)?;
    let records = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| replicate(&plan, r))
        .collect::<Result<Vec<Record>>>()?;
    Ok(summarize(&plan, records))
}

/// Coverage of one tracked coordinate with QQ output.
pub fn run_marginal(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    run_with_outputs(cfg, opts, &[OutputKind::Marginal])
}

/// Fraction of all coordinates covered, per replicate.
pub fn run_bulk(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    run_with_outputs(cfg, opts, &[OutputKind::Bulk])
}

/// Wald, adjusted t, classical LRT and rescaled LRT p-values for a null
/// coordinate.
pub fn run_pvalue_study(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    run_with_outputs(cfg, opts, &[OutputKind::Pvalue, OutputKind::Lrt])
}

fn run_with_outputs(cfg: &ExperimentConfig, opts: &RunOptions, outputs: &[OutputKind]) -> Result<ExperimentResult> {
    let mut cfg = cfg.clone();
    cfg.outputs = outputs.to_vec();
    run_experiment(&cfg, opts)
}

fn identity_config(
    kappa: f64,
    gamma: f64,
    n: usize,
    replicates: usize,
    seed: u64,
    scheme: BetaScheme,
    out: OutputKind,
) -> Result<ExperimentConfig> {
    let p = (kappa * n as f64).round() as usize;
    let cfg = ExperimentConfig {
        n,
        p,
        covariance: CovarianceDescriptor::Identity { p },
        beta_scheme: scheme,
        gamma2: gamma * gamma,
        replicates,
        seed,
        parameter_mode: ParameterMode::True,
        tau_mode: TauMode::True,
        outputs: vec![out],
        levels: super::default_levels(),
        cutoffs: super::default_cutoffs(),
        tracked: None,
        gamma_hat: None,
        lrt_replicates: None,
        probe: Default::default(),
        frontier: Default::default(),
        fit: Default::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// `α(n) = ⟨θ̂,θ⟩/‖θ‖²` and `σ(n)² = ‖θ̂ − α(n)θ‖²` on an i.i.d. Gaussian
/// design with `p = round(κn)` and half of the coefficients active.
pub fn run_convergence_check(
    kappa: f64,
    gamma: f64,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<ConvergenceSummary> {
    check_gamma(gamma)?;
    let cfg = identity_config(
        kappa,
        gamma,
        n,
        replicates,
        seed,
        BetaScheme::HalfNonnullEqual,
        OutputKind::Convergence,
    )?;
    let res = run_experiment(&cfg, &RunOptions::default())?;
    res.convergence
        .ok_or_else(|| Error::Indeterminate("every replicate failed".into()))
}

/// Direction of the MLE orthogonal to the truth, on an i.i.d. Gaussian design
/// with a single-spike `β`.
pub fn run_sphere_check(kappa: f64, gamma: f64, n: usize, replicates: usize, seed: u64) -> Result<SphereSummary> {
    let cfg = identity_config(
        kappa,
        gamma,
        n,
        replicates,
        seed,
        BetaScheme::SingleSpike,
        OutputKind::Sphere,
    )?;
    if cfg.p < 3 {
        return Err(Error::Config("p: sphere diagnostics need p >= 3".into()));
    }
    let res = run_experiment(&cfg, &RunOptions::default())?;
    res.sphere
        .ok_or_else(|| Error::Indeterminate("every replicate failed".into()))
}

fn plan<'a>(cfg: &'a ExperimentConfig, opts: &RunOptions) -> Result<Plan<'a>> {
    let spec = cfg.covariance.build(opts.base_dir.as_deref())?;
    let draw = draw_beta(
        &cfg.beta_scheme,
        &spec,
        cfg.gamma2,
        &mut substream(cfg.seed, purpose::BETA, 0),
    )?;
    let theta = spec.chol.tr_mul(&draw.beta);
    let kappa = cfg.kappa();
    let gamma = theta.norm();
    let fp_true = solve_fixed_point(TheoryInputs::new(kappa, gamma)?)?;
    let estimate = match cfg.parameter_mode {
        ParameterMode::Probefrontier => match cfg.gamma_hat {
            Some(g) => Estimate::Fixed(estimate_theory_params(kappa, g)?),
            None => {
                let f = &cfg.frontier;
                Estimate::Probe(load_or_build_frontier(
                    &opts.cache_dir(),
                    &f.kappa_grid,
                    f.n,
                    f.reps,
                    f.seed,
                )?)
            }
        },
        ParameterMode::True if cfg.tau_mode != TauMode::True => Estimate::Fixed(fp_true),
        _ => Estimate::None,
    };
    let marginal_j = match cfg.tracked {
        Some(Tracked::Nonnull) => draw.nonnull,
        Some(Tracked::Null) => draw.null,
        None => draw.nonnull.or(draw.null),
    };
    if cfg.wants(OutputKind::Marginal) && marginal_j.is_none() {
        return Err(Error::Config("tracked: no coordinate of the requested kind".into()));
    }
    let null_j = draw.null;
    if (cfg.wants(OutputKind::Pvalue) || cfg.wants(OutputKind::Lrt)) && null_j.is_none() {
        return Err(Error::Config(
            "beta_scheme: p-value studies need a null coordinate".into(),
        ));
    }
    if cfg.wants(OutputKind::Sphere) && cfg.p < 3 {
        return Err(Error::Config("p: sphere diagnostics need p >= 3".into()));
    }
    if cfg.wants(OutputKind::Convergence) && gamma == 0.0 {
        return Err(Error::Config(
            "beta_scheme: convergence diagnostics need a nonzero signal".into(),
        ));
    }
    Ok(Plan {
        cfg,
        tau_true: spec.conditional_sd(),
        spec,
        draw,
        theta,
        kappa,
        gamma,
        fp_true,
        estimate,
        marginal_j,
        null_j,
    })
}

fn failed(mut rec: Record, why: &str) -> Result<Record> {
    rec.failure = Some(why.to_string());
    Ok(rec)
}

fn failure_name(fit: &FitResult) -> &'static str {
    use crate::logistic::FailureKind::*;
    match fit.failure {
        Some(Separated) => "separated",
        Some(NormCapExceeded) => "norm_cap_exceeded",
        Some(LineSearchStalled) => "line_search_stalled",
        Some(MaxIterations) | None => "max_iterations",
    }
}

/// `τ̂` for the estimated columns, filled at the coordinates in `cols` or
/// everywhere when `all` is set.
fn estimated_tau(plan: &Plan, x: &DMatrix<f64>, cols: &[usize], all: bool) -> Result<Vec<f64>> {
    let p = plan.cfg.p;
    match plan.cfg.tau_mode {
        TauMode::True => Ok(plan.tau_true.clone()),
        TauMode::Ar1 => ar1_conditional_sd(p, estimate_rho_ar1(x)?),
        TauMode::Rss if all => estimate_tau_rss_all(x),
        TauMode::Rss => {
            let mut tau = vec![f64::NAN; p];
            for (j, t) in cols.iter().zip(estimate_tau_rss_at(x, cols)?) {
                tau[*j] = t;
            }
            Ok(tau)
        }
    }
}

fn covers(beta_hat: f64, beta: f64, alpha: f64, sigma: f64, tau: f64, n: usize, level: f64) -> Result<bool> {
    let (lo, hi) = adjusted_ci(beta_hat, alpha, sigma, tau, n, level)?;
    Ok(lo <= beta && beta <= hi)
}

fn replicate(plan: &Plan, r: u64) -> Result<Record> {
    let cfg = plan.cfg;
    let n = cfg.n;
    let x = sample_design(n, &plan.spec, &mut substream(cfg.seed, purpose::DESIGN, r)).x;
    let y = sample_labels(&(&x * &plan.draw.beta), &mut substream(cfg.seed, purpose::DATA, r));
    let mut rec = Record::default();
    let fit = fit_mle(&x, &y, &cfg.fit)?;
    rec.iterations = fit.iterations;
    if !fit.converged || fit.failure.is_some() {
        return failed(rec, failure_name(&fit));
    }
    let b = &fit.beta_hat;
    let beta = &plan.draw.beta;
    let fp = &plan.fp_true;

    let est = match &plan.estimate {
        Estimate::None => None,
        Estimate::Fixed(fp) => Some(*fp),
        Estimate::Probe(curve) => {
            let mut pc = cfg.probe.clone();
            pc.seed = derive_seed(cfg.seed, purpose::PROBE, r);
            let g = match probe(&x, &y, &pc, curve) {
                Ok(res) => res.gamma_hat,
                Err(e) => {
                    log::debug!("replicate {r}: probe failed: {e}");
                    return failed(rec, "probe");
                }
            };
            rec.gamma_hat = Some(g);
            match estimate_theory_params(plan.kappa, g) {
                Ok(fp) => Some(fp),
                Err(e) => {
                    log::debug!("replicate {r}: no fixed point at gamma_hat = {g}: {e}");
                    return failed(rec, "fixed_point");
                }
            }
        }
    };
    let want = |k| cfg.wants(k);
    let marginal = want(OutputKind::Marginal);
    let bulk = want(OutputKind::Bulk);
    let pvalue = want(OutputKind::Pvalue);
    let lrt = want(OutputKind::Lrt) && cfg.lrt_replicates.is_none_or(|m| r < m as u64);

    let mut cols = Vec::new();
    if marginal {
        cols.extend(plan.marginal_j);
    }
    if pvalue {
        cols.extend(plan.null_j);
    }
    let tau_est = match est {
        Some(_) if marginal || pvalue || bulk => match estimated_tau(plan, &x, &cols, bulk) {
            Ok(t) => Some(t),
            Err(e) => {
                log::debug!("replicate {r}: tau estimate failed: {e}");
                return failed(rec, "tau");
            }
        },
        _ => None,
    };
    let classical_se = if marginal || pvalue {
        let l = match cholesky_strict(&information(&x, b), "information") {
            Ok(l) => l,
            Err(_) => return failed(rec, "information"),
        };
        let mut se = vec![f64::NAN; cfg.p];
        for &j in &cols {
            se[j] = inverse_diag_entry(&l, j).sqrt();
        }
        Some(se)
    } else {
        None
    };

    if marginal {
        let j = plan.marginal_j.expect("validated in plan");
        let se = classical_se.as_ref().expect("computed above")[j];
        rec.beta_hat_marginal = Some(b[j]);
        let sn = (n as f64).sqrt();
        rec.t_true = Some(sn * plan.tau_true[j] * (b[j] - fp.alpha_star * beta[j]) / fp.sigma_star);
        if let (Some(e), Some(t)) = (&est, &tau_est) {
            rec.t_est = Some(sn * t[j] * (b[j] - e.alpha_star * beta[j]) / e.sigma_star);
        }
        for &level in &cfg.levels {
            rec.cover_true.push(covers(
                b[j],
                beta[j],
                fp.alpha_star,
                fp.sigma_star,
                plan.tau_true[j],
                n,
                level,
            )?);
            if let (Some(e), Some(t)) = (&est, &tau_est) {
                rec.cover_est
                    .push(covers(b[j], beta[j], e.alpha_star, e.sigma_star, t[j], n, level)?);
            }
            let z = normal_quantile(0.5 * (1.0 + level));
            rec.cover_classical.push((b[j] - beta[j]).abs() <= z * se);
        }
    }

    if bulk {
        let p = cfg.p;
        let frac = |alpha: f64, sigma: f64, tau: &[f64], level: f64| -> Result<f64> {
            let mut hits = 0usize;
            for j in 0..p {
                hits += covers(b[j], beta[j], alpha, sigma, tau[j], n, level)? as usize;
            }
            Ok(hits as f64 / p as f64)
        };
        for &level in &cfg.levels {
            rec.bulk_true
                .push(frac(fp.alpha_star, fp.sigma_star, &plan.tau_true, level)?);
            if let (Some(e), Some(t)) = (&est, &tau_est) {
                rec.bulk_est.push(frac(e.alpha_star, e.sigma_star, t, level)?);
            }
        }
    }

    if pvalue {
        let j = plan.null_j.expect("validated in plan");
        let se = classical_se.as_ref().expect("computed above")[j];
        rec.p_wald = Some((2.0 * normal_sf(b[j].abs() / se)).min(1.0));
        rec.p_t_true = Some(t_pvalue(b[j], fp.sigma_star, plan.tau_true[j], n));
        if let (Some(e), Some(t)) = (&est, &tau_est) {
            rec.p_t_est = Some(t_pvalue(b[j], e.sigma_star, t[j], n));
        }
    }

    if lrt {
        let j = plan.null_j.expect("validated in plan");
        let llr = match llr_given_full(&x, &y, &fit, &[j], &cfg.fit) {
            Ok(v) => v,
            Err(Error::NotConverged { .. }) => return failed(rec, "restricted_fit"),
            Err(e) => return Err(e),
        };
        rec.llr = Some(llr);
        rec.p_lrt_classical = Some(chi2_sf(2.0 * llr, 1));
        rec.p_lrt_true = Some(lrt_pvalue(llr, plan.kappa, fp.sigma_star, fp.lambda_star, 1)?);
        rec.lrt_stat_true = Some(fp.lrt_scale() * 2.0 * llr);
        if let Some(e) = &est {
            rec.p_lrt_est = Some(lrt_pvalue(llr, plan.kappa, e.sigma_star, e.lambda_star, 1)?);
            rec.lrt_stat_est = Some(e.lrt_scale() * 2.0 * llr);
        }
    }

    if want(OutputKind::Convergence) || want(OutputKind::Sphere) {
        let theta_hat = plan.spec.chol.tr_mul(b);
        let tt = plan.theta.norm_squared();
        let a = if tt > 0.0 { theta_hat.dot(&plan.theta) / tt } else { 0.0 };
        let resid = &theta_hat - &plan.theta * a;
        if want(OutputKind::Convergence) {
            rec.alpha_n = Some(a);
            rec.sigma2_n = Some(resid.norm_squared());
        }
        if want(OutputKind::Sphere) {
            let u = &resid / resid.norm();
            rec.sphere_norm_error = Some((u.norm() - 1.0).abs());
            let sp = (cfg.p as f64).sqrt();
            rec.sphere = u.iter().map(|v| v * sp).collect();
        }
    }
    Ok(rec)
}

fn tail(values: &[f64], cutoff: f64) -> Proportion {
    Proportion::from_flags(values.iter().map(|p| *p <= cutoff))
}

fn collect(records: &[&Record], f: impl Fn(&Record) -> Option<f64>) -> Vec<f64> {
    records.iter().filter_map(|r| f(r)).collect()
}

fn summarize(plan: &Plan, records: Vec<Record>) -> ExperimentResult {
    let cfg = plan.cfg;
    let ok: Vec<&Record> = records.iter().filter(|r| r.failure.is_none()).collect();
    let mut failures = BTreeMap::new();
    for r in &records {
        if let Some(f) = &r.failure {
            *failures.entry(f.clone()).or_insert(0usize) += 1;
        }
    }
    let failed: usize = failures.values().sum();
    let flagged = failed as f64 > 0.01 * records.len() as f64;
    if flagged {
        log::warn!("{failed} of {} replicates failed: {failures:?}", records.len());
    }
    let has_est = !matches!(plan.estimate, Estimate::None);
    let nonempty = !ok.is_empty();

    let marginal = (cfg.wants(OutputKind::Marginal) && nonempty).then(|| {
        let j = plan.marginal_j.expect("validated in plan");
        let mut t = collect(&ok, |r| r.t_true);
        let (t_mean, t_sd) = mean_sd(&t);
        let rows = cfg
            .levels
            .iter()
            .enumerate()
            .map(|(k, &level)| CoverageRow {
                level,
                true_params: Proportion::from_flags(ok.iter().map(|r| r.cover_true[k])),
                estimated: has_est.then(|| Proportion::from_flags(ok.iter().map(|r| r.cover_est[k]))),
                classical: Proportion::from_flags(ok.iter().map(|r| r.cover_classical[k])),
            })
            .collect();
        t.sort_by(f64::total_cmp);
        let m = t.len();
        let qq: Vec<(f64, f64)> = t
            .iter()
            .enumerate()
            .map(|(i, v)| (normal_quantile((i as f64 + 0.5) / m as f64), *v))
            .collect();
        let lo = (0.01 * m as f64).floor() as usize;
        let hi = (0.99 * m as f64).ceil() as usize;
        let qq_max_deviation = qq[lo..hi.min(m)].iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        MarginalSummary {
            coordinate: j,
            beta: plan.draw.beta[j],
            t_mean,
            t_sd,
            rows,
            qq_max_deviation,
            qq,
        }
    });

    let bulk = (cfg.wants(OutputKind::Bulk) && nonempty).then(|| {
        let cell = |v: Vec<f64>| {
            let (mean, sd) = mean_sd(&v);
            BulkCell {
                mean,
                sd,
                se: sd / (v.len() as f64).sqrt(),
            }
        };
        let rows = cfg
            .levels
            .iter()
            .enumerate()
            .map(|(k, &level)| BulkRow {
                level,
                true_params: cell(ok.iter().map(|r| r.bulk_true[k]).collect()),
                estimated: has_est.then(|| cell(ok.iter().map(|r| r.bulk_est[k]).collect())),
            })
            .collect();
        BulkSummary { rows }
    });

    let pvalue = (cfg.wants(OutputKind::Pvalue) && nonempty).then(|| {
        let wald = collect(&ok, |r| r.p_wald);
        let tt = collect(&ok, |r| r.p_t_true);
        let te = collect(&ok, |r| r.p_t_est);
        PvalueSummary {
            coordinate: plan.null_j.expect("validated in plan"),
            replicates: tt.len(),
            rows: tail_rows(cfg, &te, &tt, &wald, has_est),
            ks_true: ks_one_sample(&tt, |v| v.clamp(0.0, 1.0)),
        }
    });

    let lrt_recs: Vec<&Record> = ok.iter().copied().filter(|r| r.llr.is_some()).collect();
    let lrt = (cfg.wants(OutputKind::Lrt) && !lrt_recs.is_empty()).then(|| {
        let classical = collect(&lrt_recs, |r| r.p_lrt_classical);
        let tt = collect(&lrt_recs, |r| r.p_lrt_true);
        let te = collect(&lrt_recs, |r| r.p_lrt_est);
        let st = collect(&lrt_recs, |r| r.lrt_stat_true);
        let se = collect(&lrt_recs, |r| r.lrt_stat_est);
        LrtSummary {
            coordinate: plan.null_j.expect("validated in plan"),
            replicates: tt.len(),
            rows: tail_rows(cfg, &te, &tt, &classical, has_est),
            ks_true: ks_one_sample(&st, |v| chi2_cdf(v, 1)),
            ks_estimated: has_est.then(|| ks_one_sample(&se, |v| chi2_cdf(v, 1))),
        }
    });

    let convergence = (cfg.wants(OutputKind::Convergence) && nonempty).then(|| {
        let (alpha_mean, alpha_sd) = mean_sd(&collect(&ok, |r| r.alpha_n));
        let (sigma2_mean, sigma2_sd) = mean_sd(&collect(&ok, |r| r.sigma2_n));
        let root = (ok.len() as f64).sqrt();
        ConvergenceSummary {
            replicates: ok.len(),
            alpha_mean,
            alpha_se: alpha_sd / root,
            alpha_star: plan.fp_true.alpha_star,
            sigma2_mean,
            sigma2_se: sigma2_sd / root,
            kappa_sigma_star2: plan.kappa * plan.fp_true.sigma_star * plan.fp_true.sigma_star,
        }
    });

    let sphere = (cfg.wants(OutputKind::Sphere) && nonempty).then(|| sphere_summary(cfg.p, &ok));

    let gamma_hats = collect(&ok, |r| r.gamma_hat);
    let gamma_hat = match (&plan.estimate, gamma_hats.is_empty()) {
        (Estimate::Probe(_), false) => {
            let (mean, _) = mean_sd(&gamma_hats);
            Some(GammaHatSummary {
                count: gamma_hats.len(),
                mean,
                median: median(&gamma_hats),
                min: gamma_hats.iter().copied().fold(f64::INFINITY, f64::min),
                max: gamma_hats.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            })
        }
        _ => None,
    };
    let theory_estimated = match (&plan.estimate, cfg.parameter_mode) {
        (Estimate::Fixed(fp), ParameterMode::Probefrontier) => Some(TheorySummary::from(fp)),
        _ => None,
    };

    ExperimentResult {
        config: cfg.clone(),
        kappa: plan.kappa,
        gamma: plan.gamma,
        theory: TheorySummary::from(&plan.fp_true),
        theory_estimated,
        gamma_hat,
        replicates: records.len(),
        completed: ok.len(),
        failures,
        flagged,
        marginal,
        bulk,
        pvalue,
        lrt,
        convergence,
        sphere,
        records,
    }
}

fn tail_rows(cfg: &ExperimentConfig, est: &[f64], tru: &[f64], classical: &[f64], has_est: bool) -> Vec<TailRow> {
    cfg.cutoffs
        .iter()
        .map(|&c| TailRow {
            cutoff: c,
            estimated: has_est.then(|| tail(est, c)),
            true_params: tail(tru, c),
            classical: tail(classical, c),
        })
        .collect()
}

fn sphere_summary(p: usize, ok: &[&Record]) -> SphereSummary {
    let m = ok.len();
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    for j in 0..p {
        let col: Vec<f64> = ok.iter().map(|r| r.sphere[j]).collect();
        let (mean, sd) = mean_sd(&col);
        means[j] = mean;
        sds[j] = sd;
    }
    let band = 3.0 / (m as f64).sqrt();
    let outside = means.iter().filter(|v| v.abs() > band).count();
    let (u2, u3): (Vec<f64>, Vec<f64>) = ok.iter().map(|r| (r.sphere[1], r.sphere[2])).unzip();
    SphereSummary {
        replicates: m,
        p,
        max_norm_error: ok.iter().filter_map(|r| r.sphere_norm_error).fold(0.0, f64::max),
        band,
        max_abs_mean: means.iter().map(|v| v.abs()).fold(0.0, f64::max),
        fraction_outside_band: outside as f64 / p as f64,
        corr_u2_u3: correlation(&u2, &u3),
        coordinate_means: means,
        coordinate_sds: sds,
    }
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
    cov / (sa * sb)
}

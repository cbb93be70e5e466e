//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The heavy simulations share replicates: one AR(1) run at n = 4000,
//! p = 800 feeds the marginal coverage, t-test and LRT criteria. Runtime
//! limits are stated for 8 cores and are checked against the measured time
//! scaled by `cores / 8`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hdlogit::designs::{build_ar1, identity, sample_design, CovarianceDescriptor};
use hdlogit::inference::{estimate_tau_rss, estimate_tau_rss_all};
use hdlogit::logistic::{fit_mle, grad_hess, llr, log_likelihood, sample_labels, FitOptions, HessianPrecision};
use hdlogit::probe::{probe, ProbeConfig};
use hdlogit::rng::{purpose, substream};
use hdlogit::sim::{
    default_cutoffs, default_levels, make_beta, run_convergence_check, run_experiment, run_sphere_check, BetaScheme,
    ExperimentConfig, ExperimentResult, OutputKind, ParameterMode, RunOptions, TauMode,
};
use hdlogit::theory::{
    load_or_build_frontier, prox, rho_family, solve_fixed_point_with, system_residuals, GaussHermite, QuadratureGrid,
    SolverOptions, TheoryInputs, DEFAULT_ORDER,
};
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

const SEED: u64 = 1;
const N: usize = 4000;
const P: usize = 800;
const GAMMA2: f64 = 5.0;

struct Report {
    results: Vec<(String, bool)>,
    cores: usize,
}

impl Report {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((id.to_string(), pass));
    }

    /// Measured time converted to an 8-core estimate.
    fn on_eight_cores(&self, elapsed: Duration) -> Duration {
        elapsed.mul_f64(self.cores.min(8) as f64 / 8.0)
    }
}

fn work_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn ar1_config(replicates: usize, outputs: Vec<OutputKind>) -> ExperimentConfig {
    ExperimentConfig {
        n: N,
        p: P,
        covariance: CovarianceDescriptor::Ar1 { p: P, rho: 0.5 },
        beta_scheme: BetaScheme::HalfNonnullEqual,
        gamma2: GAMMA2,
        replicates,
        seed: SEED,
        parameter_mode: ParameterMode::True,
        tau_mode: TauMode::True,
        outputs,
        levels: default_levels(),
        cutoffs: default_cutoffs(),
        tracked: None,
        gamma_hat: None,
        lrt_replicates: None,
        probe: ProbeConfig::default(),
        frontier: Default::default(),
        fit: FitOptions::default(),
    }
}

fn run_logged(name: &str, cfg: &ExperimentConfig) -> (ExperimentResult, Duration) {
    let start = Instant::now();
    let res = run_experiment(cfg, &RunOptions::default()).expect("experiment runs");
    let elapsed = start.elapsed();
    res.write(&work_dir().join(name)).expect("outputs written");
    println!(
        "  {name}: {} replicates, {} completed, failures {:?}, {:.1} s",
        res.replicates,
        res.completed,
        res.failures,
        elapsed.as_secs_f64()
    );
    (res, elapsed)
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn criterion_1(rep: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    let grid = QuadratureGrid::new(DEFAULT_ORDER).unwrap();
    for (kappa, gamma2) in [(0.1, 1.0), (0.2, 5.0), (0.3, 2.0)] {
        let inputs = TheoryInputs::new(kappa, f64::sqrt(gamma2)).unwrap();
        let start = Instant::now();
        let fp = solve_fixed_point_with(inputs, &SolverOptions::default());
        let elapsed = start.elapsed();
        let Ok(fp) = fp else {
            ok = false;
            parts.push(format!("(κ={kappa}, γ²={gamma2}) solver failed"));
            continue;
        };
        let r = system_residuals(fp.alpha_star, fp.sigma_star, fp.lambda_star, inputs, &grid);
        let resid = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let perturbed = SolverOptions {
            start: Some([fp.alpha_star * 1.25, fp.sigma_star * 0.8, fp.lambda_star * 1.3]),
            ..SolverOptions::default()
        };
        let again = solve_fixed_point_with(inputs, &perturbed);
        let agree = again.as_ref().map_or(f64::INFINITY, |g| {
            (g.alpha_star - fp.alpha_star)
                .abs()
                .max((g.sigma_star - fp.sigma_star).abs())
                .max((g.lambda_star - fp.lambda_star).abs())
        });
        let pass = resid <= 1e-6 && fp.alpha_star > 1.0 && agree <= 1e-4 && elapsed <= Duration::from_secs(5);
        ok &= pass;
        parts.push(format!(
            "(κ={kappa}, γ²={gamma2}) α⋆={:.6} σ⋆={:.6} λ⋆={:.6} residual {resid:.1e} restart diff {agree:.1e} {:.2} s",
            fp.alpha_star,
            fp.sigma_star,
            fp.lambda_star,
            elapsed.as_secs_f64()
        ));
    }
    rep.record("1", ok, format!("fixed-point solver; {}", parts.join("; ")));
}

fn criterion_2(rep: &mut Report) {
    let start = Instant::now();
    let res = run_convergence_check(0.2, GAMMA2.sqrt(), N, 200, SEED);
    let elapsed = start.elapsed();
    let Ok(c) = res else {
        rep.record("2", false, format!("convergence run failed: {:?}", res.err()));
        return;
    };
    let eight = rep.on_eight_cores(elapsed);
    let pass =
        c.alpha_relative_error() <= 0.02 && c.sigma2_relative_error() <= 0.05 && eight <= Duration::from_secs(15 * 60);
    rep.record(
        "2",
        pass,
        format!(
            "mean α(n) = {:.4} ± {:.4} vs α⋆ = {:.4} ({:.2}% off, limit 2%); mean σ(n)² = {:.4} ± {:.4} vs κσ⋆² = {:.4} ({:.2}% off, limit 5%); {} replicates, {:.0} s measured, ≈{:.0} s on 8 cores",
            c.alpha_mean,
            c.alpha_se,
            c.alpha_star,
            100.0 * c.alpha_relative_error(),
            c.sigma2_mean,
            c.sigma2_se,
            c.kappa_sigma_star2,
            100.0 * c.sigma2_relative_error(),
            c.replicates,
            elapsed.as_secs_f64(),
            eight.as_secs_f64()
        ),
    );
}

struct ProbeOutcome {
    gamma2_hats: Vec<f64>,
    failures: usize,
}

fn probe_datasets(cache: &Path) -> ProbeOutcome {
    let grid: Vec<f64> = (4..=10).map(|k| k as f64 * 0.05).collect();
    let start = Instant::now();
    let curve = load_or_build_frontier(cache, &grid, 1000, 200, SEED).expect("frontier builds");
    println!(
        "  frontier knots {:?} ({:.0} s)",
        curve
            .knots
            .iter()
            .map(|k| (k.kappa, (k.gamma * 1e4).round() / 1e4))
            .collect::<Vec<_>>(),
        start.elapsed().as_secs_f64()
    );
    let spec = build_ar1(P, 0.5).unwrap();
    let beta = make_beta(
        &BetaScheme::HalfNonnullEqual,
        &spec,
        GAMMA2,
        &mut substream(SEED, purpose::BETA, 0),
    )
    .unwrap();
    let start = Instant::now();
    let results: Vec<Option<f64>> = (0..20u64)
        .into_par_iter()
        .map(|d| {
            let x = sample_design(N, &spec, &mut substream(SEED + 100, purpose::DESIGN, d)).x;
            let y = sample_labels(&(&x * &beta), &mut substream(SEED + 100, purpose::DATA, d));
            let cfg = ProbeConfig {
                seed: d,
                ..ProbeConfig::default()
            };
            match probe(&x, &y, &cfg, &curve) {
                Ok(r) => Some(r.gamma_hat * r.gamma_hat),
                Err(e) => {
                    println!("  probe dataset {d} failed: {e}");
                    None
                }
            }
        })
        .collect();
    println!("  probed 20 datasets in {:.0} s", start.elapsed().as_secs_f64());
    ProbeOutcome {
        failures: results.iter().filter(|r| r.is_none()).count(),
        gamma2_hats: results.into_iter().flatten().collect(),
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

fn criterion_4(rep: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, cov) in [
        ("ar1", CovarianceDescriptor::Ar1 { p: P, rho: 0.5 }),
        ("identity", CovarianceDescriptor::Identity { p: P }),
    ] {
        let mut cfg = ar1_config(500, vec![OutputKind::Bulk]);
        cfg.covariance = cov;
        let (res, _) = run_logged(&format!("bulk_{name}"), &cfg);
        let bulk = res.bulk.expect("bulk summary");
        let row = bulk
            .rows
            .iter()
            .find(|r| (r.level - 0.95).abs() < 1e-12)
            .expect("95% row");
        let m = row.true_params.mean;
        let pass = (0.943..=0.953).contains(&m) && !res.flagged;
        ok &= pass;
        parts.push(format!(
            "{name}: {} (sd {:.3}%, se {:.3}%)",
            pct(m),
            100.0 * row.true_params.sd,
            100.0 * row.true_params.se
        ));
    }
    rep.record(
        "4",
        ok,
        format!(
            "bulk coverage at 95%, B=500, target [94.3%, 95.3%]; {}",
            parts.join("; ")
        ),
    );
}

fn criterion_8(rep: &mut Report) {
    let start = Instant::now();
    let mut fails: Vec<String> = Vec::new();
    let mut rng = substream(SEED, purpose::REPLICATE, 8);

    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let lambda = 10f64.powf(rng.random_range(-3.0..2.0));
        let z: f64 = rng.random_range(-60.0..60.0);
        let t = prox(lambda, z);
        worst = worst.max((lambda * rho_family(t).1 + t - z).abs() / (1.0 + z.abs()));
    }
    if worst > 1e-12 {
        fails.push(format!("prox stationarity {worst:.1e}"));
    }

    let rule = GaussHermite::new(DEFAULT_ORDER).unwrap();
    let mut moment_err = 0.0f64;
    let mut exact = 1.0;
    for k in 0..=10 {
        if k > 0 {
            exact *= (2 * k - 1) as f64;
        }
        moment_err = moment_err.max((rule.expect(|z| z.powi(2 * k)) - exact).abs() / exact);
        moment_err = moment_err.max(rule.expect(|z| z.powi(2 * k + 1)).abs() / exact);
    }
    if moment_err > 1e-10 {
        fails.push(format!("quadrature moments {moment_err:.1e}"));
    }

    let double = FitOptions {
        precision: HessianPrecision::Double,
        grad_tol: Some(1e-10),
        ..FitOptions::default()
    };
    let mut grad_err = 0.0f64;
    let mut equi_err = 0.0f64;
    let mut llr_err = 0.0f64;
    for s in 0..20u64 {
        let spec = build_ar1(8, 0.5).unwrap();
        let x = sample_design(300, &spec, &mut substream(s, purpose::DESIGN, 0)).x;
        let beta = DVector::from_fn(8, |j, _| if j % 2 == 0 { 0.5 } else { 0.0 });
        let y = sample_labels(&(&x * &beta), &mut substream(s, purpose::DATA, 0));
        let b = DVector::from_fn(8, |j, _| 0.1 * j as f64 - 0.3);
        let (g, _) = grad_hess(&b, &x, &y).unwrap();
        for k in 0..8 {
            let h = 1e-5;
            let mut up = b.clone();
            let mut down = b.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (log_likelihood(&up, &x, &y).unwrap() - log_likelihood(&down, &x, &y).unwrap()) / (2.0 * h);
            grad_err = grad_err.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
        let white = spec.chol.solve_lower_triangular(&x.transpose()).unwrap().transpose();
        let (Ok(f), Ok(w)) = (
            fit_mle(&x, &y, &double).unwrap().require_converged(),
            fit_mle(&white, &y, &double).unwrap().require_converged(),
        ) else {
            continue;
        };
        let mapped = spec.chol.transpose() * &f.beta_hat;
        equi_err = equi_err.max((&mapped - &w.beta_hat).amax() / mapped.amax().max(1.0));
        let a = llr(&x, &y, &[7], &double).unwrap();
        let c = llr(&white, &y, &[7], &double).unwrap();
        llr_err = llr_err.max((a - c).abs() / a.max(1.0));
    }
    if grad_err > 1e-5 {
        fails.push(format!("gradient {grad_err:.1e}"));
    }
    if equi_err > 1e-5 {
        fails.push(format!("equivariance {equi_err:.1e}"));
    }
    if llr_err > 1e-6 {
        fails.push(format!("LLR invariance {llr_err:.1e}"));
    }

    let reps = 400;
    let sphere = run_sphere_check(0.2, 1.5, 200, reps, SEED).unwrap();
    let band = 3.0 / (reps as f64).sqrt();
    let tracked = [1, 2, 3, sphere.p / 2, sphere.p - 1];
    let sphere_ok = sphere.max_norm_error <= 1e-12
        && tracked.iter().all(|&j| sphere.coordinate_means[j].abs() <= band)
        && sphere.corr_u2_u3.abs() <= band;
    if !sphere_ok {
        fails.push(format!(
            "sphere: norm error {:.1e}, tracked means {:?}, corr {:.3}",
            sphere.max_norm_error,
            tracked.map(|j| sphere.coordinate_means[j]),
            sphere.corr_u2_u3
        ));
    }

    // τ̂ against an explicit least-squares regression and the module examples.
    let spec = build_ar1(40, 0.5).unwrap();
    let x = sample_design(400, &spec, &mut substream(SEED, purpose::DESIGN, 77)).x;
    let j = 17;
    let others: Vec<usize> = (0..40).filter(|&k| k != j).collect();
    let xo = x.select_columns(&others);
    let coef = xo
        .clone()
        .svd(true, true)
        .solve(&x.column(j).into_owned(), 1e-12)
        .unwrap();
    let rss = (x.column(j) - &xo * coef).norm_squared();
    let oracle = (rss / 400.0 / (1.0 - 0.1)).sqrt();
    let tau_err = (estimate_tau_rss(&x, j).unwrap() - oracle).abs() / oracle;
    let ident = identity(P).unwrap();
    let xi = sample_design(N, &ident, &mut substream(SEED, purpose::DESIGN, 78)).x;
    let tau_i = estimate_tau_rss_all(&xi).unwrap();
    let mean_tau = tau_i.iter().sum::<f64>() / P as f64;
    let xa = sample_design(
        N,
        &build_ar1(P, 0.5).unwrap(),
        &mut substream(SEED, purpose::DESIGN, 79),
    )
    .x;
    let tau_a = estimate_tau_rss(&xa, 400).unwrap();
    if tau_err > 1e-8 || (mean_tau - 1.0).abs() > 0.02 || (tau_a * tau_a - 0.6).abs() > 0.05 {
        fails.push(format!(
            "tau: oracle rel err {tau_err:.1e}, identity mean {mean_tau:.4}, AR1 interior τ̂² {:.4}",
            tau_a * tau_a
        ));
    }

    let elapsed = start.elapsed();
    let pass = fails.is_empty() && elapsed <= Duration::from_secs(600);
    rep.record(
        "8",
        pass,
        format!(
            "property checks: prox {worst:.1e}, moments {moment_err:.1e}, gradient {grad_err:.1e}, equivariance {equi_err:.1e}, LLR invariance {llr_err:.1e}, sphere corr {:.3} (band {band:.3}), τ̂ oracle {tau_err:.1e}, identity mean τ̂ {mean_tau:.4}; {:.0} s{}",
            sphere.corr_u2_u3,
            elapsed.as_secs_f64(),
            if fails.is_empty() { String::new() } else { format!("; failures: {}", fails.join(", ")) }
        ),
    );
}

fn criterion_9(rep: &mut Report) {
    let mut cfg = ar1_config(
        12,
        vec![
            OutputKind::Marginal,
            OutputKind::Bulk,
            OutputKind::Pvalue,
            OutputKind::Lrt,
        ],
    );
    cfg.n = 500;
    cfg.p = 50;
    cfg.covariance = CovarianceDescriptor::Ar1 { p: 50, rho: 0.5 };
    cfg.tau_mode = TauMode::Rss;
    let mut dumps = Vec::new();
    for threads in [1, 4] {
        let dir = work_dir().join(format!("determinism_{threads}"));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let res = pool.install(|| run_experiment(&cfg, &RunOptions::default())).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = res
            .write(&dir)
            .unwrap()
            .into_iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        dumps.push(files);
    }
    let pass = dumps[0] == dumps[1];
    rep.record(
        "9",
        pass,
        format!(
            "{} output files byte-identical across 1 and 4 threads: {pass}",
            dumps[0].len()
        ),
    );
}

fn main() {
    let mut rep = Report {
        results: Vec::new(),
        cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    println!("acceptance suite on {} core(s)", rep.cores);
    std::fs::create_dir_all(work_dir()).unwrap();

    criterion_1(&mut rep);
    criterion_9(&mut rep);
    criterion_8(&mut rep);
    criterion_2(&mut rep);

    let probes = probe_datasets(&work_dir().join("frontier"));
    let rel: Vec<f64> = probes.gamma2_hats.iter().map(|g| (g - GAMMA2).abs() / GAMMA2).collect();
    let median_gamma2 = median(&probes.gamma2_hats);
    let median_rel = if rel.is_empty() { f64::INFINITY } else { median(&rel) };
    println!(
        "  γ̂² per dataset: {:?}",
        probes
            .gamma2_hats
            .iter()
            .map(|g| (g * 1e3).round() / 1e3)
            .collect::<Vec<_>>()
    );

    // Shared AR(1) run: true, estimated and classical columns side by side.
    let mut cfg = ar1_config(5000, vec![OutputKind::Marginal, OutputKind::Pvalue, OutputKind::Lrt]);
    cfg.parameter_mode = ParameterMode::Probefrontier;
    cfg.tau_mode = TauMode::Rss;
    cfg.gamma_hat = Some(median_gamma2.sqrt());
    cfg.lrt_replicates = Some(2000);
    let (shared, elapsed) = run_logged("table_runs", &cfg);
    let eight = rep.on_eight_cores(elapsed);
    println!(
        "  shared run: {:.0} s measured, ≈{:.0} s on 8 cores",
        elapsed.as_secs_f64(),
        eight.as_secs_f64()
    );

    let marginal = shared.marginal.as_ref().expect("marginal summary");
    let targets = [(0.99, 0.9897), (0.95, 0.9499), (0.90, 0.8988), (0.80, 0.7988)];
    let mut ok = !shared.flagged && eight <= Duration::from_secs(30 * 60);
    let mut parts = Vec::new();
    for (level, target) in targets {
        let row = marginal
            .rows
            .iter()
            .find(|r| (r.level - level).abs() < 1e-12)
            .expect("level row");
        let p = row.true_params;
        let pass = (p.proportion - target).abs() <= 3.0 * p.se;
        ok &= pass;
        parts.push(format!(
            "{:.0}%: {} ± {} (target {})",
            level * 100.0,
            pct(p.proportion),
            pct(p.se),
            pct(target)
        ));
    }
    rep.record(
        "3",
        ok,
        format!(
            "single-coordinate coverage, B=5000, coordinate {}; {}; QQ max deviation {:.3}",
            marginal.coordinate,
            parts.join("; "),
            marginal.qq_max_deviation
        ),
    );

    criterion_4(&mut rep);

    let pv = shared.pvalue.as_ref().expect("p-value summary");
    let row5 = pv
        .rows
        .iter()
        .find(|r| (r.cutoff - 0.05).abs() < 1e-12)
        .expect("5% row");
    let adj = row5.true_params.proportion;
    let wald = row5.classical.proportion;
    rep.record(
        "5",
        (0.043..=0.062).contains(&adj) && wald >= 0.085 && !shared.flagged,
        format!(
            "t-test at 5%, B={}: adjusted (true τ, σ⋆) {} (target [4.3%, 6.2%]); classical Wald {} (target ≥ 8.5%)",
            pv.replicates,
            pct(adj),
            pct(wald)
        ),
    );

    let lrt = shared.lrt.as_ref().expect("LRT summary");
    let row10 = lrt
        .rows
        .iter()
        .find(|r| (r.cutoff - 0.10).abs() < 1e-12)
        .expect("10% row");
    let resc = row10.true_params.proportion;
    rep.record(
        "6",
        (0.085..=0.115).contains(&resc) && lrt.ks_true.p_value >= 0.01,
        format!(
            "LRT, B={}: rescaled P(p ≤ 10%) = {} (target [8.5%, 11.5%]); classical {}; KS vs χ²₁ D = {:.4}, p = {:.3}",
            lrt.replicates,
            pct(resc),
            pct(row10.classical.proportion),
            lrt.ks_true.statistic,
            lrt.ks_true.p_value
        ),
    );

    let est = row5.estimated.map_or(f64::NAN, |p| p.proportion);
    rep.record(
        "7",
        median_rel <= 0.25 && probes.failures == 0 && (est - 0.052).abs() <= 0.015,
        format!(
            "probe on 20 datasets: median |γ̂² − 5|/5 = {:.3} (limit 0.25), median γ̂² = {median_gamma2:.3}, {} failures; downstream (τ̂, σ̂) t-test at 5% = {} over {} replicates (target 5.20% ± 1.5 pp)",
            median_rel,
            probes.failures,
            pct(est),
            pv.replicates
        ),
    );

    rep.results.sort_by_key(|(id, _)| id.parse::<u32>().unwrap_or(u32::MAX));
    for (id, pass) in &rep.results {
        println!("  criterion {id}: {}", if *pass { "pass" } else { "FAIL" });
    }
    let failed: Vec<&str> = rep
        .results
        .iter()
        .filter(|(_, p)| !p)
        .map(|(id, _)| id.as_str())
        .collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        rep.results.len() - failed.len(),
        rep.results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

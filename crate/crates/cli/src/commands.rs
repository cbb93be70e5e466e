use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hdlogit::inference::{build_report, fmt_num, TauSource};
use hdlogit::linalg::{cholesky_strict, inverse_diag};
use hdlogit::logistic::{check_separable, fit_mle, information, FitOptions, FitResult, Labels};
use hdlogit::probe::{estimate_theory_params, probe, ProbeConfig};
use hdlogit::rng::{derive_seed, purpose, substream};
use hdlogit::sim::{run_experiment, ExperimentConfig, ExperimentResult, Proportion, RunOptions};
use hdlogit::special::normal_sf;
use hdlogit::theory::{frontier_cache_path, load_or_build_frontier, FrontierCurve};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::json;

use crate::dataset::{Dataset, LabelColumn};
use crate::{Cli, CliError, Command, DataArgs, FrontierArgs, GlobalArgs, TauArg};

type CliResult<T> = Result<T, CliError>;

/// Runs one parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let g = &cli.global;
    match &cli.command {
        Command::Simulate { config } => simulate(g, config),
        Command::Frontier { frontier, refresh } => frontier_cmd(g, frontier, *refresh),
        Command::Infer {
            data,
            data_args,
            level,
            tau,
            lrt,
            gamma_hat,
            resamples,
            probe_grid,
            frontier,
        } => infer(
            g,
            data,
            data_args,
            &InferArgs {
                level: *level,
                tau: *tau,
                lrt: *lrt,
                gamma_hat: *gamma_hat,
                resamples: *resamples,
                probe_grid: probe_grid.clone(),
                frontier: frontier.clone(),
            },
        ),
        Command::SubsampleStudy {
            data,
            data_args,
            variable,
            kappas,
            b,
        } => subsample_study(g, data, data_args, variable, kappas, *b),
        Command::Fit { data, data_args } => fit_cmd(g, data, data_args),
    }
}

fn load_dataset(path: &Path, args: &DataArgs) -> CliResult<Dataset> {
    let label = args.label_col.as_deref().map_or(LabelColumn::Last, LabelColumn::parse);
    let d = Dataset::load(path, &label, !args.no_center)?;
    log::info!(
        "{}: n = {}, p = {}, label {}",
        path.display(),
        d.n(),
        d.p(),
        d.label_name
    );
    Ok(d)
}

/// `<dir>/<stem><suffix>` next to `input`.
fn beside(input: &Path, suffix: &str) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    input.with_file_name(format!("{stem}{suffix}"))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::new(1, format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::new(1, format!("{}: {e}", path.display())))
}

fn fit_checked(x: &DMatrix<f64>, y: &Labels) -> CliResult<FitResult> {
    Ok(fit_mle(x, y, &FitOptions::default())?.require_converged()?)
}

/// Classical standard errors from the inverse Fisher information.
fn classical_se(x: &DMatrix<f64>, fit: &FitResult) -> CliResult<Vec<f64>> {
    let l = cholesky_strict(&information(x, &fit.beta_hat), "Fisher information")?;
    Ok(inverse_diag(&l).into_iter().map(f64::sqrt).collect())
}

fn simulate(g: &GlobalArgs, config: &Path) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(config).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let base = config.parent().map(Path::to_path_buf);
    let opts = RunOptions {
        base_dir: base,
        cache_dir: Some(g.cache_dir()),
    };
    let result = run_experiment(&cfg, &opts)?;
    let out = g.out.clone().unwrap_or_else(|| beside(config, "-results"));
    let written = result.write(&out)?;
    print!("{}", render_summary(&result));
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn pct(p: &Proportion) -> String {
    format!("{:6.2} ({:.2})", 100.0 * p.proportion, 100.0 * p.se)
}

fn render_summary(r: &ExperimentResult) -> String {
    let mut s = String::new();
    let t = &r.theory;
    let _ = writeln!(
        s,
        "n = {}, p = {}, kappa = {:.4}, gamma = {:.4}: alpha = {:.6}, sigma = {:.6}, lambda = {:.6}",
        r.config.n, r.config.p, r.kappa, r.gamma, t.alpha, t.sigma, t.lambda
    );
    if let Some(e) = &r.theory_estimated {
        let _ = writeln!(
            s,
            "estimated gamma = {:.4}: alpha = {:.6}, sigma = {:.6}, lambda = {:.6}",
            e.gamma, e.alpha, e.sigma, e.lambda
        );
    }
    if let Some(gh) = &r.gamma_hat {
        let _ = writeln!(
            s,
            "gamma-hat over {} replicates: median {:.4}, mean {:.4}, range [{:.4}, {:.4}]",
            gh.count, gh.median, gh.mean, gh.min, gh.max
        );
    }
    let _ = writeln!(s, "replicates: {} of {} completed", r.completed, r.replicates);
    for (kind, count) in &r.failures {
        let _ = writeln!(s, "  failed ({kind}): {count}");
    }
    if r.flagged {
        let _ = writeln!(s, "warning: more than 1% of the replicates failed");
    }
    if let Some(m) = &r.marginal {
        let _ = writeln!(s, "\ncoverage of beta_{} = {:.6} in % (SE)", m.coordinate, m.beta);
        let _ = writeln!(
            s,
            "{:>7}  {:>14}  {:>14}  {:>14}",
            "level", "true", "estimated", "classical"
        );
        for row in &m.rows {
            let est = row.estimated.as_ref().map_or("-".into(), pct);
            let _ = writeln!(
                s,
                "{:>7.2}  {:>14}  {:>14}  {:>14}",
                100.0 * row.level,
                pct(&row.true_params),
                est,
                pct(&row.classical)
            );
        }
        let _ = writeln!(
            s,
            "T mean {:.4}, sd {:.4}, max QQ deviation {:.4}",
            m.t_mean, m.t_sd, m.qq_max_deviation
        );
    }
    if let Some(b) = &r.bulk {
        let _ = writeln!(s, "\nbulk coverage in % (SD across replicates)");
        for row in &b.rows {
            let est = row
                .estimated
                .map_or("-".into(), |c| format!("{:.3} ({:.3})", 100.0 * c.mean, 100.0 * c.sd));
            let _ = writeln!(
                s,
                "{:>7.2}  true {:.3} ({:.3})  estimated {}",
                100.0 * row.level,
                100.0 * row.true_params.mean,
                100.0 * row.true_params.sd,
                est
            );
        }
    }
    let tail_table = |s: &mut String, title: &str, rows: &[hdlogit::sim::TailRow]| {
        let _ = writeln!(s, "\n{title}");
        let _ = writeln!(
            s,
            "{:>7}  {:>14}  {:>14}  {:>14}",
            "cutoff", "estimated", "true", "classical"
        );
        for row in rows {
            let est = row.estimated.as_ref().map_or("-".into(), pct);
            let _ = writeln!(
                s,
                "{:>6.2}%  {:>14}  {:>14}  {:>14}",
                100.0 * row.cutoff,
                est,
                pct(&row.true_params),
                pct(&row.classical)
            );
        }
    };
    if let Some(pv) = &r.pvalue {
        tail_table(
            &mut s,
            &format!(
                "P(p-value <= cutoff) in %, coordinate {}, {} replicates",
                pv.coordinate, pv.replicates
            ),
            &pv.rows,
        );
    }
    if let Some(l) = &r.lrt {
        tail_table(
            &mut s,
            &format!(
                "LRT P(p-value <= cutoff) in %, coordinate {}, {} replicates",
                l.coordinate, l.replicates
            ),
            &l.rows,
        );
        let _ = writeln!(s, "KS against chi2(1): p = {:.4}", l.ks_true.p_value);
    }
    if let Some(c) = &r.convergence {
        let _ = writeln!(
            s,
            "\nalpha(n) = {:.5} ({:.5}) vs {:.5}; sigma(n)^2 = {:.5} ({:.5}) vs {:.5}",
            c.alpha_mean, c.alpha_se, c.alpha_star, c.sigma2_mean, c.sigma2_se, c.kappa_sigma_star2
        );
    }
    if let Some(sp) = &r.sphere {
        let _ = writeln!(
            s,
            "\nsphere: max |mean| {:.4} (band {:.4}), {:.2}% outside, corr(u2, u3) = {:.4}",
            sp.max_abs_mean,
            sp.band,
            100.0 * sp.fraction_outside_band,
            sp.corr_u2_u3
        );
    }
    s
}

fn check_grid(kappas: &[f64]) -> CliResult<()> {
    if kappas.is_empty() {
        return Err(CliError::usage("--kappa-grid is empty"));
    }
    if let Some(k) = kappas.iter().find(|k| !(**k > 0.0 && **k <= 0.5)) {
        return Err(CliError::usage(format!("--kappa-grid: {k} is outside (0, 0.5]")));
    }
    if kappas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::usage("--kappa-grid must be strictly increasing"));
    }
    Ok(())
}

fn load_frontier(g: &GlobalArgs, f: &FrontierArgs) -> CliResult<(FrontierCurve, PathBuf)> {
    check_grid(&f.kappa_grid)?;
    let dir = g.cache_dir();
    let path = frontier_cache_path(&dir, &f.kappa_grid, f.n, f.reps, g.seed_or_zero());
    let curve = load_or_build_frontier(&dir, &f.kappa_grid, f.n, f.reps, g.seed_or_zero())?;
    Ok((curve, path))
}

fn frontier_cmd(g: &GlobalArgs, f: &FrontierArgs, refresh: bool) -> CliResult<()> {
    check_grid(&f.kappa_grid)?;
    if refresh {
        let path = frontier_cache_path(&g.cache_dir(), &f.kappa_grid, f.n, f.reps, g.seed_or_zero());
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| CliError::new(1, format!("{}: {e}", path.display())))?;
        }
    }
    let (curve, path) = load_frontier(g, f)?;
    println!(
        "frontier (n = {}, reps = {}, seed = {})",
        curve.n, curve.reps, curve.seed
    );
    println!("{:>8}  {:>10}", "kappa", "gamma");
    for k in &curve.knots {
        println!("{:>8.4}  {:>10.6}", k.kappa, k.gamma);
    }
    for fail in &curve.failures {
        println!("knot at kappa = {} failed: {}", fail.kappa, fail.reason);
    }
    println!("cached at {}", path.display());
    if let Some(out) = &g.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::new(1, format!("{}: {e}", dir.display())))?;
        }
        std::fs::copy(&path, out).map_err(|e| CliError::new(1, format!("{}: {e}", out.display())))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

struct InferArgs {
    level: f64,
    tau: TauArg,
    lrt: bool,
    gamma_hat: Option<f64>,
    resamples: usize,
    probe_grid: Option<Vec<f64>>,
    frontier: FrontierArgs,
}

fn infer(g: &GlobalArgs, path: &Path, data_args: &DataArgs, a: &InferArgs) -> CliResult<()> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(CliError::usage(format!("--level must lie in (0, 1), got {}", a.level)));
    }
    let d = load_dataset(path, data_args)?;
    if check_separable(&d.x, &d.y)?.separable {
        return Err(CliError::separable());
    }
    let fit = fit_checked(&d.x, &d.y)?;
    let kappa = d.p() as f64 / d.n() as f64;
    let gamma_hat = match a.gamma_hat {
        Some(gh) if gh > 0.0 && gh.is_finite() => gh,
        Some(gh) => return Err(CliError::usage(format!("--gamma-hat must be positive, got {gh}"))),
        None => {
            let (curve, _) = load_frontier(g, &a.frontier)?;
            let cfg = ProbeConfig {
                kappa_grid: a.probe_grid.clone(),
                resamples_per_kappa: a.resamples,
                seed: g.seed_or_zero(),
                ..ProbeConfig::default()
            };
            let res = probe(&d.x, &d.y, &cfg, &curve)?;
            println!(
                "probe: kappa-hat = {:.4}, gamma-hat = {:.4}",
                res.kappa_hat, res.gamma_hat
            );
            res.gamma_hat
        }
    };
    let params = estimate_theory_params(kappa, gamma_hat)?;
    let tau = match a.tau {
        TauArg::Rss => TauSource::Rss,
        TauArg::Ar1 => TauSource::Ar1,
    };
    let report = build_report(&d.x, &d.y, &fit, &params, &tau, a.level, a.lrt, &FitOptions::default())?;
    let out = g.out.clone().unwrap_or_else(|| beside(path, "-report.csv"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::new(1, format!("{}: {e}", dir.display())))?;
    }
    report.save(&out)?;

    let se = classical_se(&d.x, &fit)?;
    let h = &report.header;
    println!(
        "n = {}, p = {}, kappa = {:.4}, gamma-hat = {:.4}: alpha = {:.6}, sigma = {:.6}, lambda = {:.6}",
        h.n, h.p, h.kappa, h.gamma_hat, h.alpha_hat, h.sigma_hat, h.lambda_hat
    );
    if let Some(rho) = h.rho_hat {
        println!("AR(1) correlation estimate {rho:.4}");
    }
    println!(
        "{:<16} {:>11} {:>10} {:>9}   {:>11} {:>23} {:>9} {:>9}",
        "variable", "mle", "se", "p_wald", "adjusted", "interval", "p_t", "p_lrt"
    );
    for r in &report.records {
        let p_wald = 2.0 * normal_sf((r.beta_hat / se[r.j]).abs());
        println!(
            "{:<16} {:>11.5} {:>10.5} {:>9.4}   {:>11.5} [{:>10.5}, {:>10.5}] {:>9.4} {:>9}",
            d.names[r.j],
            r.beta_hat,
            se[r.j],
            p_wald,
            r.debiased,
            r.ci_lo,
            r.ci_hi,
            r.p_t,
            r.p_lrt.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// One fitted subsample.
struct Draw {
    beta_hat: f64,
    se: f64,
}

fn subsample_study(
    g: &GlobalArgs,
    path: &Path,
    data_args: &DataArgs,
    variable: &str,
    kappas: &[f64],
    b: usize,
) -> CliResult<()> {
    let d = load_dataset(path, data_args)?;
    let j = d.column(variable)?;
    let (n, p) = (d.n(), d.p());
    let kappa0 = p as f64 / n as f64;
    if b == 0 {
        return Err(CliError::usage("--B must be at least 1"));
    }
    if let Some(k) = kappas.iter().find(|k| !(**k >= kappa0 * (1.0 - 1e-12) && **k < 1.0)) {
        return Err(CliError::usage(format!(
            "--kappas: {k} must lie in [p/n, 1) with p/n = {kappa0}"
        )));
    }
    let full = fit_checked(&d.x, &d.y)?;
    let full_se = classical_se(&d.x, &full)?[j];
    let seed = g.seed_or_zero();

    let mut csv = String::from("kappa,rep,n,beta_hat,se_classical\n");
    let mut summary = Vec::new();
    for (k, &kappa) in kappas.iter().enumerate() {
        let m = ((p as f64 / kappa).round() as usize).clamp(p + 1, n);
        let stream = derive_seed(seed, purpose::SUBSAMPLE, k as u64);
        let draws: Vec<Result<Draw, String>> = (0..b as u64)
            .into_par_iter()
            .map(|r| {
                let mut rng = substream(stream, purpose::SUBSAMPLE, r);
                let mut rows = rand::seq::index::sample(&mut rng, n, m).into_vec();
                rows.sort_unstable();
                let xs = d.x.select_rows(&rows);
                let ys = d.y.subset(&rows);
                let fit = fit_mle(&xs, &ys, &FitOptions::default()).map_err(|e| e.to_string())?;
                if let Some(kind) = fit.failure {
                    return Err(format!("{kind:?}"));
                }
                let l = cholesky_strict(&information(&xs, &fit.beta_hat), "Fisher information")
                    .map_err(|e| e.to_string())?;
                let se = hdlogit::linalg::inverse_diag_entry(&l, j).sqrt();
                Ok(Draw {
                    beta_hat: fit.beta_hat[j],
                    se,
                })
            })
            .collect();
        let mut failures = std::collections::BTreeMap::<String, usize>::new();
        for (r, draw) in draws.iter().enumerate() {
            match draw {
                Ok(dr) => {
                    let _ = writeln!(
                        csv,
                        "{},{r},{m},{},{}",
                        fmt_num(kappa),
                        fmt_num(dr.beta_hat),
                        fmt_num(dr.se)
                    );
                }
                Err(reason) => {
                    log::warn!("kappa = {kappa}, subsample {r}: {reason}");
                    *failures.entry(reason.clone()).or_default() += 1;
                }
            }
        }
        let failed: usize = failures.values().sum();
        println!(
            "kappa = {kappa}: subsample size {m}, {} of {b} fits succeeded",
            b - failed
        );
        summary.push(json!({
            "kappa": kappa,
            "n": m,
            "requested": b,
            "completed": b - failed,
            "failures": failures,
        }));
    }
    let out = g.out.clone().unwrap_or_else(|| beside(path, "-subsample.csv"));
    write_file(&out, &csv)?;
    let sidecar = json!({
        "variable": d.names[j],
        "column": j,
        "seed": seed,
        "full_data": {
            "n": n,
            "p": p,
            "kappa": kappa0,
            "beta_hat": full.beta_hat[j],
            "se_classical": full_se,
        },
        "kappas": summary,
    });
    let side = out.with_extension("json");
    write_file(
        &side,
        &(serde_json::to_string_pretty(&sidecar).map_err(hdlogit::Error::from)? + "\n"),
    )?;
    println!(
        "full-data estimate for {}: {:.6} (se {:.6})",
        d.names[j], full.beta_hat[j], full_se
    );
    println!("wrote {} and {}", out.display(), side.display());
    Ok(())
}

fn fit_cmd(g: &GlobalArgs, path: &Path, data_args: &DataArgs) -> CliResult<()> {
    let d = load_dataset(path, data_args)?;
    let fit = fit_checked(&d.x, &d.y)?;
    let se = classical_se(&d.x, &fit)?;
    let mut csv = String::from("name,beta_hat,se_classical,z,p\n");
    for (j, name) in d.names.iter().enumerate() {
        let z = fit.beta_hat[j] / se[j];
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            csv_field(name),
            fmt_num(fit.beta_hat[j]),
            fmt_num(se[j]),
            fmt_num(z),
            fmt_num(2.0 * normal_sf(z.abs()))
        );
    }
    match &g.out {
        Some(out) => {
            write_file(out, &csv)?;
            println!(
                "converged in {} iterations, log-likelihood {:.6}",
                fit.iterations, fit.loglik
            );
            println!("wrote {}", out.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hdlogit::designs::{build_ar1, identity, sample_design, CovarianceSpec};
use hdlogit::logistic::sample_labels;
use hdlogit::rng::{purpose, substream};
use hdlogit::sim::{make_beta, BetaScheme};
use nalgebra::DVector;
use tempfile::TempDir;

fn hdlogit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdlogit"))
        .args(args)
        .env_remove("HDLOGIT_CACHE")
        .env("HDLOGIT_CACHE", dir.join("cache"))
        .current_dir(dir)
        .output()
        .expect("failed to start hdlogit")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a simulated dataset with labels in the last column and returns `β`.
fn write_dataset(path: &Path, n: usize, spec: &CovarianceSpec, gamma2: f64, seed: u64, zero_one: bool) -> DVector<f64> {
    let beta = make_beta(
        &BetaScheme::HalfNonnullEqual,
        spec,
        gamma2,
        &mut substream(seed, purpose::BETA, 0),
    )
    .unwrap();
    let x = sample_design(n, spec, &mut substream(seed, purpose::DESIGN, 0)).x;
    let y = sample_labels(&(&x * &beta), &mut substream(seed, purpose::DATA, 0));
    let mut text = (0..spec.p()).map(|j| format!("v{j}")).collect::<Vec<_>>().join(",") + ",y\n";
    for i in 0..n {
        for j in 0..spec.p() {
            text += &format!("{:.17e},", x[(i, j)]);
        }
        let label = y.as_slice()[i];
        text += if label > 0.0 {
            "1\n"
        } else if zero_one {
            "0\n"
        } else {
            "-1\n"
        };
    }
    std::fs::write(path, text).unwrap();
    beta
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(Result::unwrap).collect()
}

fn small_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    let text = format!(
        r#"{{
  "n": 300, "p": 30,
  "covariance": {{ "kind": "ar1", "p": 30, "rho": 0.5 }},
  "beta_scheme": "half_nonnull_equal", "gamma2": 1.0,
  "replicates": 24, "seed": 11,
  "tau_mode": "rss",
  "outputs": ["marginal", "pvalue"]{extra}
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_writes_tables_next_to_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "table1.json", "");
    let out = hdlogit(&["simulate", cfg.to_str().unwrap()], tmp.path());
    ok(&out);
    let results = tmp.path().join("table1-results");
    for f in ["summary.json", "coverage.csv", "qq.csv", "pvalue.csv", "replicates.csv"] {
        assert!(results.join(f).exists(), "{f} missing");
    }
    let rows = read_rows(&results.join("coverage.csv"));
    assert_eq!(rows.len(), 5);
    let levels: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(levels, [0.99, 0.98, 0.95, 0.90, 0.80]);
    assert_eq!(read_rows(&results.join("replicates.csv")).len(), 24);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("coverage of beta_"), "{stdout}");
}

#[test]
fn simulate_probefrontier_has_four_column_pvalue_table() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(
        tmp.path(),
        "table3.json",
        r#", "parameter_mode": "probefrontier", "gamma_hat": 1.0"#,
    );
    let out = hdlogit(&["simulate", cfg.to_str().unwrap(), "--out", "res"], tmp.path());
    ok(&out);
    let mut r = csv::Reader::from_path(tmp.path().join("res/pvalue.csv")).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(str::to_string).collect();
    let columns: Vec<&str> = header
        .iter()
        .map(String::as_str)
        .filter(|h| !h.ends_with("_se"))
        .collect();
    assert_eq!(columns, ["cutoff", "estimated", "true", "classical"]);
    assert_eq!(r.records().count(), 4);
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ \"n\": 100, ").unwrap();
    let out = hdlogit(&["simulate", bad.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let cfg = small_config(tmp.path(), "unknown.json", r#", "replicats": 3"#);
    let out = hdlogit(&["simulate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("replicats"), "{}", stderr(&out));

    let cfg = tmp.path().join("wide.json");
    let text = std::fs::read_to_string(small_config(tmp.path(), "base.json", ""))
        .unwrap()
        .replace("\"n\": 300", "\"n\": 20");
    std::fs::write(&cfg, text).unwrap();
    let out = hdlogit(&["simulate", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("p: need p < n"), "{}", stderr(&out));

    let out = hdlogit(&["simulate", "missing.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "det.json", r#", "lrt_replicates": 10"#);
    let text = std::fs::read_to_string(&cfg).unwrap().replace(
        r#""outputs": ["marginal", "pvalue"]"#,
        r#""outputs": ["marginal", "bulk", "pvalue", "lrt"]"#,
    );
    std::fs::write(&cfg, text).unwrap();
    ok(&hdlogit(
        &["simulate", cfg.to_str().unwrap(), "--threads", "1", "--out", "one"],
        tmp.path(),
    ));
    ok(&hdlogit(
        &["simulate", cfg.to_str().unwrap(), "--threads", "3", "--out", "three"],
        tmp.path(),
    ));
    let mut names: Vec<_> = std::fs::read_dir(tmp.path().join("one"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 7, "{names:?}");
    for name in names {
        let a = std::fs::read(tmp.path().join("one").join(&name)).unwrap();
        let b = std::fs::read(tmp.path().join("three").join(&name)).unwrap();
        assert!(a == b, "{name:?} differs between thread counts");
    }
}

#[test]
fn seed_flag_overrides_config_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "s.json", "");
    ok(&hdlogit(&["simulate", cfg.to_str().unwrap(), "--out", "a"], tmp.path()));
    ok(&hdlogit(
        &["simulate", cfg.to_str().unwrap(), "--out", "b", "--seed", "11"],
        tmp.path(),
    ));
    ok(&hdlogit(
        &["simulate", cfg.to_str().unwrap(), "--out", "c", "--seed", "12"],
        tmp.path(),
    ));
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("replicates.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

const SMALL_FRONTIER: [&str; 6] = ["--kappa-grid", "0.1,0.2,0.3,0.4", "--n", "200", "--reps", "20"];

#[test]
fn frontier_is_cached_and_reproducible() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["frontier", "--out", "first.json"];
    args.extend(SMALL_FRONTIER);
    let out = hdlogit(&args, tmp.path());
    ok(&out);
    let first: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("first.json")).unwrap()).unwrap();
    let gammas: Vec<f64> = first["knots"]
        .as_array()
        .unwrap()
        .iter()
        .map(|k| k["gamma"].as_f64().unwrap())
        .collect();
    assert!(gammas.len() >= 3, "{gammas:?}");
    assert!(gammas.windows(2).all(|w| w[1] < w[0]), "{gammas:?}");
    assert!(std::fs::read_dir(tmp.path().join("cache")).unwrap().count() == 1);

    let mut args = vec!["frontier", "--refresh", "--out", "second.json"];
    args.extend(SMALL_FRONTIER);
    ok(&hdlogit(&args, tmp.path()));
    assert_eq!(
        std::fs::read(tmp.path().join("first.json")).unwrap(),
        std::fs::read(tmp.path().join("second.json")).unwrap()
    );

    let out = hdlogit(&["frontier", "--kappa-grid", "0.2,0.6"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn frontier_knot_is_stable_across_seeds() {
    let tmp = TempDir::new().unwrap();
    let knot = |seed: &str| {
        let out_name = format!("k{seed}.json");
        ok(&hdlogit(
            &[
                "frontier",
                "--kappa-grid",
                "0.2",
                "--n",
                "1000",
                "--reps",
                "100",
                "--seed",
                seed,
                "--out",
                &out_name,
            ],
            tmp.path(),
        ));
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join(out_name)).unwrap()).unwrap();
        v["knots"][0]["gamma"].as_f64().unwrap()
    };
    let (a, b) = (knot("1"), knot("2"));
    assert!((a - b).abs() <= 0.1, "{a} vs {b}");
}

#[test]
fn infer_reports_calibrated_intervals() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("sim.csv");
    let spec = build_ar1(200, 0.5).unwrap();
    let beta = write_dataset(&data, 1000, &spec, 1.0, 4, false);
    let mut args = vec![
        "infer",
        "sim.csv",
        "--tau",
        "ar1",
        "--frontier-n",
        "400",
        "--frontier-reps",
        "40",
    ];
    args.extend(["--kappa-grid", "0.2,0.25,0.3,0.35,0.4,0.45,0.5"]);
    let out = hdlogit(&args, tmp.path());
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gamma-hat"), "{stdout}");
    assert!(stdout.contains("p_wald"), "{stdout}");
    let report = tmp.path().join("sim-report.csv");
    let rows = read_rows(&report);
    assert_eq!(rows.len(), 200);
    let covered = rows
        .iter()
        .filter(|r| {
            let j: usize = r[0].parse().unwrap();
            let (lo, hi): (f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap());
            lo <= beta[j] && beta[j] <= hi
        })
        .count();
    assert!((180..=199).contains(&covered), "{covered} of 200 covered");

    // Every number survives a parse and re-format unchanged.
    let text = std::fs::read_to_string(&report).unwrap();
    for line in text.lines().skip(1) {
        for cell in line.split(',').skip(1).filter(|c| !c.is_empty()) {
            let v: f64 = cell.parse().unwrap();
            assert_eq!(hdlogit::inference::fmt_num(v), cell);
        }
    }
    let header: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("sim-report.json")).unwrap()).unwrap();
    assert_eq!(header["p"], 200);
    assert!(header["rho_hat"].as_f64().unwrap() > 0.4);
}

#[test]
fn infer_with_given_gamma_and_lrt() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("d.csv");
    write_dataset(&data, 400, &identity(20).unwrap(), 1.0, 8, true);
    let out = hdlogit(
        &["infer", "d.csv", "--gamma-hat", "1.0", "--lrt", "--out", "r/report.csv"],
        tmp.path(),
    );
    ok(&out);
    let rows = read_rows(&tmp.path().join("r/report.csv"));
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r[7].parse::<f64>().unwrap())));
}

#[test]
fn zero_one_labels_match_signed_labels() {
    let tmp = TempDir::new().unwrap();
    let spec = identity(10).unwrap();
    write_dataset(&tmp.path().join("a.csv"), 200, &spec, 2.0, 3, true);
    write_dataset(&tmp.path().join("b.csv"), 200, &spec, 2.0, 3, false);
    ok(&hdlogit(&["fit", "a.csv", "--out", "a-fit.csv"], tmp.path()));
    ok(&hdlogit(&["fit", "b.csv", "--out", "b-fit.csv"], tmp.path()));
    let a = std::fs::read(tmp.path().join("a-fit.csv")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b-fit.csv")).unwrap());
    let rows = read_rows(&tmp.path().join("a-fit.csv"));
    assert_eq!(&rows[0][0], "v0");
    assert_eq!(rows.len(), 10);
}

fn separable_csv(dir: &Path) -> PathBuf {
    let path = dir.join("sep.csv");
    let mut text = String::from("a,b,c,label\n");
    for i in 0..30 {
        let a = i as f64 - 14.5;
        let b = ((i * 7) % 11) as f64;
        let c = ((i * 5) % 13) as f64 / 3.0;
        text += &format!("{a},{b},{c},{}\n", u8::from(a > 0.0));
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn separable_data_exit_with_code_three() {
    let tmp = TempDir::new().unwrap();
    separable_csv(tmp.path());
    for cmd in ["infer", "fit"] {
        let out = hdlogit(
            &[cmd, "sep.csv", "--gamma-hat", "1"][..if cmd == "fit" { 2 } else { 4 }],
            tmp.path(),
        );
        assert_eq!(out.status.code(), Some(3), "{cmd}: {}", stderr(&out));
        assert!(stderr(&out).contains("separable"), "{}", stderr(&out));
    }
}

#[test]
fn probe_grid_exhaustion_exits_with_code_four() {
    let tmp = TempDir::new().unwrap();
    write_dataset(&tmp.path().join("weak.csv"), 500, &identity(50).unwrap(), 0.5, 6, false);
    let mut args = vec!["infer", "weak.csv", "--probe-grid", "0.11,0.12", "--resamples", "4"];
    args.extend(SMALL_FRONTIER);
    let out = hdlogit(&args, tmp.path());
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn malformed_data_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("m.csv"), "a,b,y\n1,2,1\n3,,0\n4,5,1\n6,1,0\n").unwrap();
    let out = hdlogit(&["fit", "m.csv"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3, column 1 (b)"), "{}", stderr(&out));
    let out = hdlogit(&["fit", "m.csv", "--label-col", "zz"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

fn subsample(
    dir: &Path,
    data: &str,
    variable: &str,
    kappas: &str,
    b: &str,
    seed: &str,
    out: &str,
) -> serde_json::Value {
    ok(&hdlogit(
        &[
            "subsample-study",
            data,
            "--variable",
            variable,
            "--kappas",
            kappas,
            "--B",
            b,
            "--seed",
            seed,
            "--out",
            out,
        ],
        dir,
    ));
    let side = dir.join(out).with_extension("json");
    serde_json::from_slice(&std::fs::read(side).unwrap()).unwrap()
}

#[test]
fn subsample_at_full_ratio_reproduces_full_fit() {
    let tmp = TempDir::new().unwrap();
    write_dataset(&tmp.path().join("d.csv"), 300, &identity(30).unwrap(), 2.0, 2, false);
    let side = subsample(tmp.path(), "d.csv", "v3", "0.1", "1", "0", "full.csv");
    let rows = read_rows(&tmp.path().join("full.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][2], "300");
    let b: f64 = rows[0][3].parse().unwrap();
    assert_eq!(b, side["full_data"]["beta_hat"].as_f64().unwrap());
    let se: f64 = rows[0][4].parse().unwrap();
    assert_eq!(se, side["full_data"]["se_classical"].as_f64().unwrap());

    let out = hdlogit(
        &[
            "subsample-study",
            "d.csv",
            "--variable",
            "v3",
            "--kappas",
            "0.05",
            "--B",
            "2",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn subsample_rows_count_successful_fits() {
    let tmp = TempDir::new().unwrap();
    write_dataset(&tmp.path().join("d.csv"), 400, &identity(40).unwrap(), 6.0, 5, false);
    let side = subsample(tmp.path(), "d.csv", "0", "0.1,0.3,0.45", "15", "3", "rows.csv");
    let completed: u64 = side["kappas"]
        .as_array()
        .unwrap()
        .iter()
        .map(|k| k["completed"].as_u64().unwrap())
        .sum();
    let failed: u64 = side["kappas"]
        .as_array()
        .unwrap()
        .iter()
        .map(|k| {
            k["failures"]
                .as_object()
                .unwrap()
                .values()
                .map(|v| v.as_u64().unwrap())
                .sum::<u64>()
        })
        .sum();
    assert_eq!(completed + failed, 45);
    assert_eq!(read_rows(&tmp.path().join("rows.csv")).len() as u64, completed);
    let again = subsample(tmp.path(), "d.csv", "0", "0.1,0.3,0.45", "15", "3", "again.csv");
    assert_eq!(side, again);
    assert_eq!(
        std::fs::read(tmp.path().join("rows.csv")).unwrap(),
        std::fs::read(tmp.path().join("again.csv")).unwrap()
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[test]
fn subsample_medians_grow_with_dimensionality() {
    let tmp = TempDir::new().unwrap();
    let spec = identity(100).unwrap();
    let kappas = [0.1, 0.18, 0.26];
    let mut increasing = 0;
    for seed in 0..20u64 {
        let data = format!("d{seed}.csv");
        let beta = write_dataset(&tmp.path().join(&data), 1000, &spec, 5.0, 100 + seed, false);
        let j = (0..100).find(|&j| beta[j] != 0.0).unwrap().to_string();
        let out = format!("s{seed}.csv");
        subsample(tmp.path(), &data, &j, "0.1,0.18,0.26", "25", &seed.to_string(), &out);
        let rows = read_rows(&tmp.path().join(&out));
        let medians: Vec<f64> = kappas
            .iter()
            .map(|k| {
                median(
                    rows.iter()
                        .filter(|r| r[0].parse::<f64>().unwrap() == *k)
                        .map(|r| r[3].parse::<f64>().unwrap().abs())
                        .collect(),
                )
            })
            .collect();
        if medians.windows(2).all(|w| w[1] > w[0]) {
            increasing += 1;
        }
    }
    assert!(increasing >= 18, "medians increasing in {increasing} of 20 seeds");
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            hdlogit::sim::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 5);
}

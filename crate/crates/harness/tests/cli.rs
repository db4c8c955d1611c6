use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn smc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smc")).args(args).output().expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run_config(dir: &TempDir, sub: &str, text: &str, extra: &[&str]) -> Output {
    let path = write_config(dir, &format!("{sub}.json"), text);
    let mut args = vec![sub, "--config", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    smc(&args)
}

fn summary(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

/// `(t, estimator, scheme, exact, empirical)`.
type CsvRow = (String, String, String, Option<f64>, Option<f64>);

fn rows(csv: &str) -> Vec<CsvRow> {
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,estimator,scheme,exact_value,empirical_value,ci_low,ci_high,n_replicates"
    );
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 8, "{l}");
            let num = |s: &str| if s.is_empty() { None } else { Some(s.parse::<f64>().unwrap()) };
            (f[0].to_string(), f[1].to_string(), f[2].to_string(), num(f[3]), num(f[4]))
        })
        .collect()
}

const SMALL_RUN: &str = r#"{"experiment": "run", "model": {"kind": "two_state_hmm", "steps": 6},
    "filter": {"particles": 300, "replicates": 4}}"#;

#[test]
fn passing_run_exits_zero_and_writes_both_files() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let out = run_config(&dir, "run", SMALL_RUN, &["--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("run.csv")).unwrap();
    assert!(rows(&csv).iter().any(|r| r.1 == "weighted:indicator_1"));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(json["experiment"], "run");
    assert_eq!(json["passed"], true);
    assert_eq!(json["seed"], 1);
}

#[test]
fn failed_check_exits_one() {
    // the selection slopes are flat on this model, so the growth-rate checks fail
    let dir = TempDir::new().unwrap();
    let out = run_config(
        &dir,
        "rate-fit",
        r#"{"experiment": "rate-fit", "model": {"kind": "beta_bernoulli"},
            "filter": {"grid": {"t_min": 100, "t_max": 1000, "points": 4}}}"#,
        &["--format", "json"],
    );
    assert_eq!(out.status.code(), Some(1));
    let s = summary(&out);
    assert_eq!(s["passed"], false);
    assert!(String::from_utf8_lossy(&out.stderr).contains("slope_multinomial"));
}

#[test]
fn configuration_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let unknown_key = write_config(&dir, "a.json", r#"{"experiment": "run", "model": {"kind": "mixing_hmm", "steps": 3}, "bogus": 1}"#);
    let small_h = write_config(
        &dir,
        "b.json",
        r#"{"experiment": "run", "model": {"kind": "mixing_hmm", "steps": 3}, "filter": {"particles": 3}}"#,
    );
    let missing = dir.path().join("missing.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--config", unknown_key.to_str().unwrap()],
        vec!["run", "--config", small_h.to_str().unwrap()],
        vec!["stability", "--config", unknown_key.to_str().unwrap()],
        vec!["run", "--config", missing.to_str().unwrap()],
        vec!["run", "--format", "xml"],
        vec!["no-such-experiment"],
    ];
    for args in cases {
        assert_eq!(smc(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn subcommand_must_match_config() {
    let dir = TempDir::new().unwrap();
    let out = run_config(&dir, "stability", SMALL_RUN, &[]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let path = write_config(&dir, "run.json", SMALL_RUN);
    let out = smc(&["clt-check", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reruns_and_thread_counts_give_identical_bytes() {
    let dir = TempDir::new().unwrap();
    let a = run_config(&dir, "run", SMALL_RUN, &["--seed", "7"]);
    let b = run_config(&dir, "run", SMALL_RUN, &["--seed", "7", "--threads", "1"]);
    let c = run_config(&dir, "run", SMALL_RUN, &["--seed", "7", "--threads", "3"]);
    let d = run_config(&dir, "run", SMALL_RUN, &["--seed", "8"]);
    assert!(!a.stdout.is_empty());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    assert_ne!(a.stdout, d.stdout);
}

#[test]
fn json_format_prints_the_summary() {
    let dir = TempDir::new().unwrap();
    let out = run_config(&dir, "run", SMALL_RUN, &["--format", "json", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&out);
    assert_eq!(s["seed"], 5);
    assert!(s["metrics"]["checks"].as_array().is_some_and(|c| !c.is_empty()));
}

#[test]
fn deterministic_filter_has_zero_clt_variance() {
    // unit weights and a deterministic kernel: every estimate is exact
    let dir = TempDir::new().unwrap();
    let out = run_config(
        &dir,
        "clt-check",
        r#"{"experiment": "clt-check",
            "model": {"kind": "finite_hmm", "initial": [1.0, 0.0],
                      "transition": [[0.0, 1.0], [1.0, 0.0]],
                      "emission": [[0.5, 0.5], [0.5, 0.5]],
                      "observations": [0, 1, 1, 0]},
            "filter": {"particles": 50, "trials": 20, "schemes": ["multinomial", "residual"]},
            "functionals": [{"kind": "indicator", "state": 0}]}"#,
        &["--format", "json"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = &summary(&out)["metrics"];
    for key in ["multinomial_weighted", "residual_unweighted"] {
        assert_eq!(m[format!("{key}_exact_variance")].as_f64(), Some(0.0), "{key}");
        assert_eq!(m[format!("{key}_empirical_variance")].as_f64(), Some(0.0), "{key}");
    }
}

#[test]
fn uninformative_emissions_are_stable() {
    let dir = TempDir::new().unwrap();
    let out = run_config(
        &dir,
        "stability",
        r#"{"experiment": "stability",
            "model": {"kind": "finite_hmm", "initial": [0.3, 0.3, 0.4],
                      "transition": [[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]],
                      "emission": [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]],
                      "observations": [0, 1, 0, 0, 1, 1, 0, 1, 0, 1, 1, 0, 0, 1, 0, 1, 0, 0, 1, 1]},
            "filter": {"contraction_horizon": 6}}"#,
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn constant_functional_has_no_scheme_gap() {
    let dir = TempDir::new().unwrap();
    let out = run_config(
        &dir,
        "compare-schemes",
        r#"{"experiment": "compare-schemes", "model": {"kind": "two_state_hmm", "steps": 5},
            "functionals": [{"kind": "constant", "value": 3.0}]}"#,
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&String::from_utf8(out.stdout).unwrap());
    assert!(!rows.is_empty());
    for r in rows {
        assert!(r.3.unwrap().abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn exact_conditional_gives_equal_variances() {
    let dir = TempDir::new().unwrap();
    let out = run_config(
        &dir,
        "rb-compare",
        r#"{"experiment": "rb-compare", "model": {"kind": "marginal_pair_example", "steps": 6, "exact": true}}"#,
        &["--format", "json"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let checks = summary(&out)["metrics"]["checks"].as_array().unwrap().clone();
    assert!(checks.iter().any(|c| c["name"] == "multinomial_equal_when_exact" && c["passed"] == true));
}

#[test]
fn identical_emissions_give_no_weight_degeneracy() {
    let dir = TempDir::new().unwrap();
    let ys: Vec<String> = (0..30).map(|t| (t % 2).to_string()).collect();
    let text = format!(
        r#"{{"experiment": "weight-degeneracy",
            "model": {{"kind": "finite_hmm", "initial": [0.5, 0.5],
                       "transition": [[0.9, 0.1], [0.2, 0.8]],
                       "emission": [[0.3, 0.7], [0.3, 0.7]],
                       "observations": [{}]}},
            "filter": {{"pairs": 100, "particles": 100, "fit_window": [2, 30]}}}}"#,
        ys.join(", ")
    );
    // log weights agree up to rounding, so there is no trend to fit
    let out = run_config(&dir, "weight-degeneracy", &text, &["--format", "json"]);
    assert_ne!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let m = &summary(&out)["metrics"];
    assert!(m["slope"].as_f64().unwrap().abs() < 1e-25);
    assert!((m["final_max_weight"].as_f64().unwrap() - 0.01).abs() < 1e-12);
    let out = run_config(&dir, "weight-degeneracy", &text, &[]);
    let rows = rows(&String::from_utf8(out.stdout).unwrap());
    assert!(rows.iter().filter_map(|r| r.4.or(r.3)).all(|v| v.abs() < 1e-25 || v > 1e-3));
}

#[test]
fn default_configs_need_no_file() {
    let out = smc(&["compare-schemes"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(rows(&String::from_utf8(out.stdout).unwrap()).iter().any(|r| r.1 == "gap"));
}

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paircorr"))
        .args(args)
        .env_remove("PAIRCORR_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn curve_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    let o = run(&["curve", "--sigma", "0.22", "--f", "0.5", "--p-tilde", "0.022", "--grid", "0.05:10:200", "-o", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("delta_p,R"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 200);
    assert!(rows.iter().all(|&(_, r)| r >= -1.0));
}

#[test]
fn curve_json_to_stdout() {
    let o = run(&["curve", "--sigma", "0.5", "--f", "1", "--p-tilde", "1", "--grid", "0.1:2:5", "--format", "json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["delta_p"].as_array().unwrap().len(), 5);
    assert_eq!(v["params"]["sigma"], 0.5);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["curve", "--sigma", "0.5"])), 2);
    assert_eq!(code(&run(&["curve", "--sigma", "-1", "--f", "0.5", "--p-tilde", "0.1"])), 2);
    assert_eq!(code(&run(&["curve", "--sigma", "0.5", "--f", "2", "--p-tilde", "0.1"])), 2);
    assert_eq!(code(&run(&["curve", "--sigma", "0.5", "--f", "0.5", "--p-tilde", "0.1", "--grid", "3:1:10"])), 2);
    let o = run(&["synth", "--sigma", "0.5", "--f", "0.5", "--p-tilde", "0.05", "--noise", "-0.1"]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["fit", "--data", "/nonexistent/data.csv"])), 2);
    assert_eq!(code(&run(&["bogus"])), 2);
}

#[test]
fn numeric_error_exits_1() {
    // pure triplet at vanishing relative momentum: the oracle refuses the channel
    let o = run(&["oracle-check", "--sigma", "0.5", "--f", "1", "--p-tilde", "0", "--grid", "1:1:1", "--samples", "1000"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fit_empty_and_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["fit", "--data", path_str(&empty)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient data"));

    let header = dir.path().join("header.csv");
    std::fs::write(&header, "# digitized from a figure\ndelta_p,R\n# nothing yet\n").unwrap();
    let o = run(&["fit", "--data", path_str(&header)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient data"));
}

#[test]
fn fit_malformed_row_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "delta_p,R\n0.1,-0.3\n# ok\n0.2,oops\n").unwrap();
    let o = run(&["fit", "--data", path_str(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_then_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.csv");
    let result = dir.path().join("fit.json");
    let o = run(&["synth", "--sigma", "0.22", "--f", "0.5", "--p-tilde", "0.022", "--noise", "0", "-o", path_str(&data)]);
    assert_eq!(code(&o), 0);
    let o = run(&["fit", "--data", path_str(&data), "-o", path_str(&result)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    for key in ["sigma", "f", "p_tilde", "approx_error_pct", "converged", "residuals"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!((v["sigma"].as_f64().unwrap() / 0.22 - 1.0).abs() < 1e-4);
    assert!((v["f"].as_f64().unwrap() - 0.5).abs() < 1e-3);
    assert_eq!(v["converged"], true);
}

#[test]
fn noisy_fit_recovers_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.csv");
    let o = run(&["synth", "--sigma", "0.55", "--f", "0.5", "--p-tilde", "0.055", "--noise", "0.1", "--seed", "5", "-o", path_str(&data)]);
    assert_eq!(code(&o), 0);
    let o = run(&["fit", "--data", path_str(&data)]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["sigma"].as_f64().unwrap() / 0.55 - 1.0).abs() < 0.2);
}

#[test]
fn fit_non_convergence_exits_3_and_writes_result() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth.csv");
    let result = dir.path().join("fit.json");
    run(&["synth", "--sigma", "0.39", "--f", "0.5", "--p-tilde", "0.039", "--noise", "0.1", "-o", path_str(&data)]);
    let o = run(&["fit", "--data", path_str(&data), "--max-iter", "1", "-o", path_str(&result)]);
    assert_eq!(code(&o), 3);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(v["converged"], false);
}

#[test]
fn synth_is_deterministic() {
    let args = ["synth", "--sigma", "0.39", "--f", "0.5", "--p-tilde", "0.039", "--noise", "0.1", "--seed", "42"];
    assert_eq!(run(&args).stdout, run(&args).stdout);
}

#[test]
fn oracle_check_passes_at_default_budget() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    let o = run(&["oracle-check", "--sigma", "0.5", "--f", "0.5", "--p-tilde", "0.5", "--grid", "1:1:1", "-o", path_str(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("delta_p,closed,oracle,err,pass\n"));
    assert_eq!(text.matches("PASS").count(), 2);
}

#[test]
fn oracle_check_tiny_budget_fails_with_4() {
    let o = run(&["oracle-check", "--sigma", "0.5", "--f", "0.5", "--p-tilde", "0.5", "--grid", "0.5:2:4", "--samples", "1000"]);
    assert_eq!(code(&o), 4);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("FAIL"));
    assert!(text.contains("# I_cor") && text.contains("# I_uncor"));
}

#[test]
fn thread_count_from_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_paircorr"))
        .args(["curve", "--sigma", "0.5", "--f", "0.5", "--p-tilde", "0.05", "--grid", "0.1:1:3"])
        .env("PAIRCORR_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
}

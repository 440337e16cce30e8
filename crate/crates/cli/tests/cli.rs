use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn unfold(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unfold"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// A small, fast configuration: two distributions, no annealing, no bootstrap.
fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{
  "distributions": [
    {"kind": "normal", "mean": 0.0, "sigma": 1.0, "range": [-4.0, 4.0]},
    {"kind": "exponential", "rate": 1.0, "range": [0.0, 6.0]}
  ],
  "n_events": 2000,
  "n_bins": 6,
  "response_events": 20000,
  "methods": ["MI", "IBU", "CD"],
  "bootstrap_toys": 0,
  "master_seed": 3
}"#,
    )
    .unwrap();
    path.display().to_string()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

#[test]
fn bad_config_reports_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"n_bins": 2}"#).unwrap();
    let out = unfold(&["benchmark", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = error_json(&out);
    assert!(err["error"]["kind"].is_string());
    assert!(err["error"]["message"].as_str().unwrap().contains("bin"));
}

#[test]
fn unknown_field_and_missing_file_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.json");
    fs::write(&cfg, r#"{"n_event": 10}"#).unwrap();
    let out = unfold(&["generate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    error_json(&out);

    let missing = dir.path().join("nope.json");
    let out = unfold(&["generate", "--config", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(error_json(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("nope.json"));
}

#[test]
fn bad_method_name_is_an_error() {
    let out = unfold(&["benchmark", "--methods", "MI,NOPE"]);
    assert!(!out.status.success());
    error_json(&out);
}

#[test]
fn generate_then_unfold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let gen = dir.path().join("gen");
    let out = unfold(&["generate", "--config", &cfg, "--out", gen.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let inst = gen.join("normal.json");
    assert!(inst.exists());
    assert!(gen.join("exponential.json").exists());

    let result = dir.path().join("normal_result.json");
    let out = unfold(&[
        "unfold",
        inst.to_str().unwrap(),
        "--config",
        &cfg,
        "--methods",
        "MI,CD",
        "--lambda",
        "0.01",
        "--out",
        result.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(&result).unwrap()).unwrap();
    let records = run["records"].as_array().unwrap();
    let methods: Vec<&str> = records.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["MI", "CD"]);
    assert_eq!(records[1]["lambda"].as_f64(), Some(0.01));
    assert_eq!(records[0]["estimate"].as_array().unwrap().len(), 6);
}

#[test]
fn benchmark_writes_csv_json_and_figures_then_plot_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let res = dir.path().join("res");
    let out = unfold(&["benchmark", "--config", &cfg, "--out", res.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(res.join("benchmark.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "distribution,method,lambda,chi2,bin_index,truth,measured,estimate,error,ratio"
    );
    // 2 distributions x 3 methods x 6 bins
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 6);

    let svgs: Vec<_> = fs::read_dir(&res)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "svg"))
        .collect();
    assert_eq!(svgs.len(), 2);
    let first = svgs[0].path();
    let before = fs::read(&first).unwrap();

    let replot = dir.path().join("replot");
    let out = unfold(&[
        "plot",
        res.join("results.json").to_str().unwrap(),
        "--out",
        replot.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let after = fs::read(replot.join(first.file_name().unwrap())).unwrap();
    assert_eq!(before, after);
}

#[test]
fn seed_flag_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let read = |seed: &str| {
        let out_dir = dir.path().join(format!("g{seed}"));
        let out = unfold(&["generate", "--config", &cfg, "--seed", seed, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success());
        fs::read_to_string(out_dir.join("normal.json")).unwrap()
    };
    assert_eq!(read("5"), read("5"));
    assert_ne!(read("5"), read("6"));
}

#[test]
fn scan_lambda_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let res = dir.path().join("scan");
    let out = unfold(&[
        "scan-lambda",
        "--config",
        &cfg,
        "--methods",
        "CD",
        "--lambda",
        "0,0.01,1",
        "--out",
        res.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(res.join("lambda_scan.csv")).unwrap();
    // header + 2 distributions x 3 lambdas
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}

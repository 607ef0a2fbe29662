use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn alreview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alreview"))
        .args(args)
        .output()
        .unwrap()
}

fn small() -> Vec<&'static str> {
    vec![
        "--n-train",
        "200",
        "--n-test",
        "40",
        "--u-init",
        "20",
        "--budget",
        "60",
        "--cycles",
        "3",
    ]
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn run_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r").display().to_string();
    let mut args = vec![
        "run",
        "--seed",
        "1",
        "--strategy",
        "entropy",
        "--policy",
        "highest-loss",
        "--out",
        &out,
    ];
    args.extend(small());
    let o = alreview(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("r/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn run_without_out_prints_csv_and_is_deterministic() {
    let mut args = vec!["run", "--seed", "4"];
    args.extend(small());
    let a = alreview(&args);
    let b = alreview(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).starts_with("cycle,budget_total,"));
}

#[test]
fn stop_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full").display().to_string();
    let part = dir.path().join("part").display().to_string();
    let mut a = vec!["run", "--out", &full];
    a.extend(small());
    let mut b = vec!["run", "--out", &part, "--stop-after", "1"];
    b.extend(small());
    assert!(alreview(&a).status.success());
    assert!(alreview(&b).status.success());
    assert!(alreview(&["run", "--resume", &part]).status.success());
    assert_eq!(
        fs::read(dir.path().join("full/metrics.csv")).unwrap(),
        fs::read(dir.path().join("part/metrics.csv")).unwrap()
    );
}

#[test]
fn multi_seed_run_writes_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let mut args = vec!["run", "--seeds", "1,2", "--out", &out];
    args.extend(small());
    assert!(alreview(&args).status.success());
    assert!(dir.path().join("aggregate.csv").exists());
    assert!(dir.path().join("seed_2/metrics.csv").exists());
}

#[test]
fn sweep_writes_a_curve_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let args = [
        "sweep",
        "--lambda",
        "0.0,0.1,0.2,0.3,0.4",
        "--out",
        &out,
        "--n-train",
        "200",
        "--n-test",
        "40",
        "--u-init",
        "20",
        "--budget",
        "60",
        "--cycles",
        "1",
    ];
    let o = alreview(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for l in ["0", "0.1", "0.2", "0.3", "0.4"] {
        assert!(dir.path().join(format!("lambda_{l}.csv")).exists(), "lambda {l}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"cycles": 2, "policy": "none", "n_train": 200, "n_test": 40, "u_init": 20, "budget": 60}"#,
    )
    .unwrap();
    let out = dir.path().join("r");
    let o = alreview(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--cycles",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let saved: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(saved["cycles"], 1);
    assert_eq!(saved["policy"], "none");
}

#[test]
fn plot_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.svg");
    let o = alreview(&[
        "plot",
        "--input",
        &data("golden_metrics.csv"),
        "--label",
        "entropy + HL",
        "--title",
        "golden",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&out).unwrap(), fs::read(data("golden_plot.svg")).unwrap());
}

#[test]
fn gen_data_then_eval_preds() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).display().to_string();
    let o = alreview(&[
        "gen-data",
        "--n-train",
        "60",
        "--n-test",
        "20",
        "--out",
        &p("d.json"),
        "--noise-out",
        &p("n.json"),
        "--predictions-out",
        &p("p.json"),
        "--skill",
        "0.8",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = alreview(&[
        "eval-preds",
        "--dataset",
        &p("d.json"),
        "--noise",
        &p("n.json"),
        "--predictions",
        &p("p.json"),
        "--review-budget",
        "40",
        "--out",
        &p("report.json"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("report.json")).unwrap()).unwrap();
    assert!(r["map"].as_f64().unwrap() > 0.0);
    assert_eq!(r["ranking"].as_array().unwrap().len(), 60);
    assert!(r["reviews"].as_array().unwrap().len() <= 40);
}

#[test]
fn unknown_flag_prints_usage() {
    let o = alreview(&["run", "--bogus"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = alreview(&["frobnicate"]);
    assert!(!o.status.success());
}

#[test]
fn exit_codes_by_error_class() {
    let o = alreview(&["run", "--lambda", "1.5"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"classes":["a","b"],"images":[{"id":1,"width":10,"height":10,"split":"train","labels":[{"id":1,"bbox":[0,0,0,2],"class":1}]}]}"#).unwrap();
    let o = alreview(&[
        "run",
        "--dataset",
        bad.to_str().unwrap(),
        "--u-init",
        "0",
        "--cycles",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let o = alreview(&[
        "plot",
        "--input",
        dir.path().join("missing.csv").to_str().unwrap(),
        "--out",
        "x.svg",
    ]);
    assert_eq!(o.status.code(), Some(4));
}

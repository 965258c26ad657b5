use std::path::Path;
use std::process::{Command, Output};

fn treemix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treemix"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let o = treemix(&["synth", "--n", "1000", "--seed", "7", "--out", p(&out)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x_1,x_2,y");
    assert_eq!(lines.len(), 1001);
}

#[test]
fn missing_model_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("t.csv");
    assert!(treemix(&["synth", "--n", "20", "--out", p(&train)])
        .status
        .success());
    let o = treemix(&[
        "simplify",
        "--model",
        "m.json",
        "--train",
        p(&train),
        "--k",
        "4",
        "--out",
        "rules.json",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("m.json"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(treemix(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(treemix(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(
        treemix(&[
            "simplify",
            "--model",
            "m.json",
            "--train",
            "t.csv",
            "--intercept",
            "maybe"
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn every_subcommand_has_help() {
    for args in [
        vec!["--help"],
        vec!["synth", "--help"],
        vec!["train-atm", "--help"],
        vec!["simplify", "--help"],
        vec!["baseline", "--help"],
        vec!["evaluate", "--help"],
        vec!["reproduce", "--help"],
        vec!["reproduce", "synthetic", "--help"],
        vec!["reproduce", "energy", "--help"],
    ] {
        let o = treemix(&args);
        assert_eq!(o.status.code(), Some(0), "{args:?}");
        assert!(!o.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn train_simplify_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test, model, rules) = (
        dir.path().join("train.csv"),
        dir.path().join("test.csv"),
        dir.path().join("m.json"),
        dir.path().join("r.json"),
    );
    assert!(
        treemix(&["synth", "--n", "400", "--seed", "1", "--out", p(&train)])
            .status
            .success()
    );
    assert!(
        treemix(&["synth", "--n", "400", "--seed", "2", "--out", p(&test)])
            .status
            .success()
    );
    let o = treemix(&[
        "train-atm",
        "--train",
        p(&train),
        "--trees",
        "30",
        "--out",
        p(&model),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&model)["feature_count"], 2);

    let o = treemix(&[
        "simplify",
        "--model",
        p(&model),
        "--train",
        p(&train),
        "--test",
        p(&test),
        "--k",
        "4",
        "--restarts",
        "3",
        "--seed",
        "5",
        "--intercept",
        "off",
        "--out",
        p(&rules),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&rules);
    assert_eq!(r["rules"]["components"].as_array().unwrap().len(), 4);
    assert_eq!(r["mixture"]["intercept"], false);
    let reported = r["errors"]["model_i_test_mse"].as_f64().unwrap();

    let o = treemix(&["evaluate", "--model", p(&rules), "--test", p(&test)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["model"], "mixture");
    assert!((v["test_mse"].as_f64().unwrap() - reported).abs() < 1e-12);

    let o = treemix(&["evaluate", "--model", p(&model), "--test", p(&test)]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["model"], "ensemble");
    assert!(
        (v["test_mse"].as_f64().unwrap() - r["errors"]["atm_test_mse"].as_f64().unwrap()).abs()
            < 1e-12
    );
}

#[test]
fn baseline_reports_leaves_and_error() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    assert!(
        treemix(&["synth", "--n", "300", "--seed", "3", "--out", p(&train)])
            .status
            .success()
    );
    assert!(
        treemix(&["synth", "--n", "300", "--seed", "4", "--out", p(&test)])
            .status
            .success()
    );
    let o = treemix(&["baseline", "--train", p(&train), "--test", p(&test)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(
        v["leaves"].as_u64().unwrap() as usize,
        v["rules"]["components"].as_array().unwrap().len()
    );
    assert!(v["test_mse"].as_f64().unwrap().is_finite());
}

#[test]
fn bad_csv_cell_is_located() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("bad.csv");
    std::fs::write(&train, "x_1,x_2,y\n0.1,0.2,0\n0.3,abc,1\n").unwrap();
    let o = treemix(&["baseline", "--train", p(&train)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("row 2") && err.contains("x_2"), "{err}");
}

#[test]
fn energy_without_file_fails_cleanly() {
    let o = treemix(&["reproduce", "energy", "--data", "/nonexistent/energy.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr)
        .unwrap()
        .contains("/nonexistent/energy.csv"));
}

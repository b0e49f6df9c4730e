//! End-to-end runs of the command-line binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dualvb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualvb")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dualvb(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small simulated dataset and a hyperparameter file.
fn workspace(missing: f64) -> TempDir {
    let dir = TempDir::new().unwrap();
    let cfg = format!("n = 40\nview_dims = [5, 4]\ns = 2\nmissing_rate = {missing}\nseed = 3\n");
    fs::write(dir.path().join("synth.toml"), cfg).unwrap();
    fs::write(dir.path().join("hp.toml"), "s = 4\nmax_iters = 40\n").unwrap();
    ok(&["simulate", "--config", p(&dir.path().join("synth.toml")), "--out", p(&dir.path().join("data"))]);
    dir
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(dualvb(&["--help"]).status.code(), Some(0));
    assert_eq!(dualvb(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(dualvb(&[]).status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic_and_echoes_dimensions() {
    let a = workspace(0.0);
    let b = workspace(0.0);
    for f in ["view0.csv", "view1.csv", "labels.csv", "ground_truth.json", "manifest.toml"] {
        assert_eq!(read(&a.path().join("data").join(f)), read(&b.path().join("data").join(f)), "{f}");
    }
    let out = ok(&["simulate", "--config", p(&a.path().join("synth.toml")), "--out", p(&a.path().join("again"))]);
    assert!(out.contains("N=40") && out.contains("[5, 4]") && out.contains("C=2"), "{out}");
}

#[test]
fn train_predict_round_trip() {
    let w = workspace(0.0);
    let d = w.path();
    let manifest = d.join("data/manifest.toml");
    let hp = d.join("hp.toml");
    for run in ["a", "b"] {
        ok(&["train", "--manifest", p(&manifest), "--config", p(&hp), "--seed", "5", "--out", p(&d.join(run))]);
    }
    for f in ["state.json", "standardize.json", "fit_report.json", "elbo_trace.csv"] {
        assert!(d.join("a").join(f).exists(), "{f}");
    }
    assert_eq!(read(&d.join("a/elbo_trace.csv")), read(&d.join("b/elbo_trace.csv")));
    assert_eq!(read(&d.join("a/state.json")), read(&d.join("b/state.json")));

    for run in ["pa", "pb"] {
        ok(&["predict", "--state", p(&d.join("a/state.json")), "--manifest", p(&manifest), "--out", p(&d.join(run))]);
    }
    let preds = read(&d.join("pa/predictions.csv"));
    assert_eq!(preds, read(&d.join("pb/predictions.csv")));
    assert!(preds.starts_with("row,proba_c0,proba_c1,y_mean_c0,y_mean_c1,y_var_c0,y_var_c1,label\n"));
    assert_eq!(preds.lines().count(), 41);
    let metrics: serde_json::Value = serde_json::from_str(&read(&d.join("pa/metrics.json"))).unwrap();
    assert!(metrics["auc"].as_f64().unwrap() > 0.5);

    ok(&[
        "predict", "--state", p(&d.join("a/state.json")), "--manifest", p(&manifest),
        "--out", p(&d.join("pz")), "--spaces", "g", "--transductive",
    ]);
}

#[test]
fn cross_validation_writes_fold_archives() {
    let w = workspace(0.1);
    let d = w.path();
    let out = ok(&[
        "train", "--manifest", p(&d.join("data/manifest.toml")), "--config", p(&d.join("hp.toml")),
        "--folds", "3", "--mode", "supervised", "--out", p(&d.join("cv")),
    ]);
    assert!(out.contains("mean auc"));
    let table = read(&d.join("cv/cv_metrics.csv"));
    assert_eq!(table.lines().count(), 4);
    for f in 0..3 {
        assert!(d.join(format!("cv/fold_{f}/predictions.csv")).exists());
    }
    let states: Vec<String> = (0..3).map(|f| d.join(format!("cv/fold_{f}/state.json")).display().to_string()).collect();
    let mut args = vec!["factors", "--min-folds", "2", "--out"];
    let fac = d.join("fac");
    args.push(p(&fac));
    args.push("--states");
    args.extend(states.iter().map(|s| s.as_str()));
    ok(&args);
    for f in ["stability_w.csv", "stability_v.csv", "loadings_v.csv", "factor_summary.md", "factors.json"] {
        assert!(fac.join(f).exists(), "{f}");
    }
}

#[test]
fn factors_on_identical_archives_are_all_stable() {
    let w = workspace(0.0);
    let d = w.path();
    ok(&["train", "--manifest", p(&d.join("data/manifest.toml")), "--config", p(&d.join("hp.toml")), "--out", p(&d.join("m"))]);
    let st = d.join("m/state.json").display().to_string();
    let mut args: Vec<String> = ["factors", "--out", p(&d.join("fac")), "--states"].map(String::from).to_vec();
    args.extend(std::iter::repeat_n(st, 10));
    let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = ok(&args);
    let json: serde_json::Value = serde_json::from_str(&read(&d.join("fac/factors.json"))).unwrap();
    let v = &json[1]["stability"];
    assert_eq!(v["n_stable"], v["n_reference"], "{out}");
    assert!(v["n_reference"].as_u64().unwrap() > 0);
}

#[test]
fn impute_without_missing_cells_returns_the_input() {
    let w = workspace(0.0);
    let d = w.path();
    ok(&["train", "--manifest", p(&d.join("data/manifest.toml")), "--config", p(&d.join("hp.toml")), "--out", p(&d.join("m"))]);
    let out = ok(&["impute", "--state", p(&d.join("m/state.json")), "--manifest", p(&d.join("data/manifest.toml")), "--out", p(&d.join("imp"))]);
    assert!(out.contains("imputed 0 cells"));
    let parse = |s: String| -> Vec<Vec<f64>> {
        s.lines().skip(1).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect()
    };
    assert_eq!(parse(read(&d.join("imp/view0_imputed.csv"))), parse(read(&d.join("data/view0.csv"))));
}

#[test]
fn impute_fills_masked_cells_deterministically() {
    let w = workspace(0.2);
    let d = w.path();
    let m = d.join("data/manifest.toml");
    ok(&["train", "--manifest", p(&m), "--config", p(&d.join("hp.toml")), "--out", p(&d.join("m"))]);
    for run in ["i1", "i2"] {
        ok(&["impute", "--state", p(&d.join("m/state.json")), "--manifest", p(&m), "--out", p(&d.join(run))]);
    }
    let a = read(&d.join("i1/view1_imputed.csv"));
    assert_eq!(a, read(&d.join("i2/view1_imputed.csv")));
    assert!(!a.contains(",,") && !a.contains("NA"));
    assert!(d.join("i1/view1_variance.csv").exists());
}

#[test]
fn missing_bench_table_shape() {
    let w = workspace(0.0);
    let d = w.path();
    fs::write(d.join("fast.toml"), "s = 3\nmax_iters = 8\n").unwrap();
    ok(&[
        "missing-bench", "--manifest", p(&d.join("data/manifest.toml")), "--config", p(&d.join("fast.toml")),
        "--out", p(&d.join("b")),
    ]);
    let table = read(&d.join("b/bench.csv"));
    assert!(table.starts_with("rate,mask,method,bacc,auc,rmse\n"));
    assert_eq!(table.lines().count(), 1 + 6 * 10 * 3);

    ok(&[
        "missing-bench", "--manifest", p(&d.join("data/manifest.toml")), "--config", p(&d.join("fast.toml")),
        "--out", p(&d.join("b0")), "--rates", "0", "--masks", "2",
    ]);
    let rows: Vec<Vec<String>> = read(&d.join("b0/bench.csv"))
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    for chunk in rows.chunks(3) {
        assert!(chunk.iter().all(|r| r[3] == chunk[0][3] && r[4] == chunk[0][4]), "{chunk:?}");
    }
}

#[test]
fn error_paths_set_exit_codes() {
    let d = TempDir::new().unwrap();
    let missing = d.path().join("nope.toml");
    let out = dualvb(&["train", "--manifest", p(&missing), "--out", p(&d.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());

    let bad = d.path().join("bad.toml");
    fs::write(&bad, "views = 7\n").unwrap();
    let out = dualvb(&["train", "--manifest", p(&bad), "--out", p(&d.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let w = workspace(0.0);
    fs::write(w.path().join("neg.toml"), "s = 0\n").unwrap();
    let out = dualvb(&[
        "train", "--manifest", p(&w.path().join("data/manifest.toml")), "--config", p(&w.path().join("neg.toml")),
        "--out", p(&w.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let out = dualvb(&["predict", "--state", p(&missing), "--manifest", p(&missing), "--out", p(&d.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lrqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrqr"))
        .args(args)
        .env_remove("LRQR_JOBS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Numeric column of a CSV by header name.
fn column(path: &Path, name: &str) -> Vec<f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(j).unwrap().parse().unwrap()).collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", p(dir)];
    args.extend_from_slice(extra);
    ok(&lrqr(&args));
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let flags = ["--kind", "group", "--groups", "5", "--seed", "7", "--n", "300"];
    synth(a.path(), &flags);
    synth(b.path(), &flags);
    for f in ["source.csv", "target.csv", "source_unlabeled.csv", "test.csv", "oracle_r.csv", "spec.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let m = json(&a.path().join("manifest.json"));
    assert_eq!(m["command"]["synth"]["seed"], 7);
    assert_eq!(column(&a.path().join("source.csv"), "score").len(), 300);
}

#[test]
fn no_shift_oracle_is_one() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &["--kind", "gaussian", "--mu", "0,0", "--n", "50"]);
    let r = column(&d.path().join("oracle_r.csv"), "r");
    assert_eq!(r.len(), 200);
    assert!(r.iter().all(|&v| v == 1.0));
}

#[test]
fn synth_missing_dir_names_path() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope");
    let out = lrqr(&["synth", "--out", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn fit_intercept_recovers_quantile() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &["--kind", "gaussian", "--mu", "0", "--n", "500", "--seed", "3"]);
    let model = d.path().join("m.json");
    ok(&lrqr(&[
        "fit",
        "--source",
        p(&d.path().join("source.csv")),
        "--basis",
        "intercept",
        "--lambda",
        "0",
        "--out",
        p(&model),
    ]));
    let m = json(&model);
    let gamma = m["gamma"][0].as_f64().unwrap();
    let mut s = column(&d.path().join("source.csv"), "score");
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = s[(0.9 * s.len() as f64).ceil() as usize - 1];
    assert!((gamma - q).abs() <= 1e-3, "{gamma} vs {q}");
    assert_eq!(m["diagnostics"]["converged"], true);
    assert!(d.path().join("m.manifest.json").exists());
}

#[test]
fn tune_picks_lambda_on_grid() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &["--kind", "group", "--n", "300", "--seed", "2"]);
    let model = d.path().join("tuned.json");
    let dir = d.path();
    ok(&lrqr(&[
        "tune",
        "--source",
        p(&dir.join("source.csv")),
        "--target",
        p(&dir.join("target.csv")),
        "--source-unlabeled",
        p(&dir.join("source_unlabeled.csv")),
        "--basis",
        "indicators",
        "--out",
        p(&model),
    ]));
    let t = json(&dir.join("tuned.tune.json"));
    let ls = t["lambda_star"].as_f64().unwrap();
    let chosen = t["chosen_lambda"].as_f64().unwrap();
    assert!(chosen >= ls / 10.0 - 1e-15 && chosen <= ls, "{chosen} not in [{}, {ls}]", ls / 10.0);
    assert_eq!(json(&model)["lambda"].as_f64().unwrap(), chosen);

    // evaluate the tuned model plus the split baseline
    let report = dir.join("report.csv");
    ok(&lrqr(&[
        "eval",
        "--model",
        p(&model),
        "--test",
        p(&dir.join("test.csv")),
        "--calibration",
        p(&dir.join("source.csv")),
        "--out",
        p(&report),
    ]));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("method,replication,coverage,avg_size,lambda,seed\n"));
    assert!(text.contains("\ntuned,0,"));
    assert!(text.contains("\nsplit,0,"));
    let summary = json(&dir.join("report.summary.json"));
    assert!(summary["size_convention"].as_str().unwrap().contains("2*max"));
    assert_eq!(summary["methods"][0]["group_coverage"].as_array().unwrap().len(), 5);
}

#[test]
fn malformed_csv_is_input_error() {
    let d = tempfile::tempdir().unwrap();
    let f = d.path().join("bad.csv");
    std::fs::write(&f, "x1,score\n1.0,0.5\n2.0,oops\n").unwrap();
    let out = lrqr(&["fit", "--source", p(&f), "--lambda", "0", "--out", p(&d.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3") && err.contains("score") && err.contains("oops"), "{err}");
}

#[test]
fn non_convergence_exits_two_and_writes_model() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), &["--kind", "gaussian", "--mu", "1,0", "--n", "300", "--seed", "4"]);
    let dir = d.path();
    let model = dir.join("m.json");
    let out = lrqr(&[
        "fit",
        "--source",
        p(&dir.join("source.csv")),
        "--target",
        p(&dir.join("target.csv")),
        "--source-unlabeled",
        p(&dir.join("source_unlabeled.csv")),
        "--lambda",
        "5",
        "--max-outer",
        "1",
        "--tol-stationarity",
        "1e-14",
        "--out",
        p(&model),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&model)["diagnostics"]["converged"], false);
}

#[test]
fn unknown_method_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let out = lrqr(&[
        "bench",
        "--methods",
        "split,dro",
        "--seed",
        "1",
        "--out",
        p(&d.path().join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method `dro`"));
}

fn bench_args<'a>(out: &'a str, reps: &'a str) -> Vec<&'a str> {
    vec![
        "bench", "--kind", "gaussian", "--mu", "0,0", "--n", "2000", "--methods", "split,lrqr",
        "--replications", reps, "--seed", "5", "--out", out,
    ]
}

#[test]
fn bench_single_replication_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a.csv");
    let b = d.path().join("b.csv");
    ok(&lrqr(&bench_args(p(&a), "1")));
    let out = Command::new(env!("CARGO_BIN_EXE_lrqr"))
        .args(bench_args(p(&b), "1"))
        .env("LRQR_JOBS", "2")
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(json(&d.path().join("b.manifest.json"))["jobs"], 2);
}

#[test]
fn bench_without_shift_covers_nominal() {
    let d = tempfile::tempdir().unwrap();
    let r = d.path().join("r.csv");
    ok(&lrqr(&bench_args(p(&r), "50")));
    let s = json(&d.path().join("r.summary.json"));
    for m in s["methods"].as_array().unwrap() {
        let c = m["coverage"]["mean"].as_f64().unwrap();
        assert!((c - 0.9).abs() <= 0.02, "{}: {c}", m["method"]);
        assert_eq!(m["replications"], 50);
    }
    assert_eq!(s["methods"].as_array().unwrap().len(), 2);
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use symtree_core::tree::{reference_cstr_model, serialize};

fn symtree(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symtree"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = symtree(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(symtree(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(symtree(dir.path(), &["train"]).status.code(), Some(1));
    assert_eq!(symtree(dir.path(), &["baseline", "--kind", "forest", "--train", "a", "--out", "b"]).status.code(), Some(1));
    assert_eq!(symtree(dir.path(), &["--help"]).status.code(), Some(0));
    let missing = symtree(dir.path(), &["train", "--train", "nope.csv", "--out", "m.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.csv"));
    let bad_key = symtree(dir.path(), &["--set", "learn.detph=3", "gen-data"]);
    assert_eq!(bad_key.status.code(), Some(2));
}

#[test]
fn predict_with_the_published_model() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("paper.tree.json"), serialize(&reference_cstr_model())).unwrap();
    let out = ok(dir.path(), &["predict", "--model", "paper.tree.json", "--x", "0.75", "0.8"]);
    for line in out.lines() {
        let y: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!((y - 75.0).abs() < 0.1, "{line}");
    }
}

#[test]
fn pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // a small grid keeps this fast; the canonical run is in the acceptance target
    let small = ["--set", "data.n_train=12", "--set", "data.n_test=6", "--set", "learn.depth=1"];
    let with = |args: &[&str]| -> Vec<String> { small.iter().chain(args).map(|s| s.to_string()).collect() };
    let run = |args: &[&str]| {
        let a = with(args);
        ok(d, &a.iter().map(String::as_str).collect::<Vec<_>>())
    };

    run(&["gen-data", "--out-dir", "data"]);
    let first = std::fs::read(d.join("data/train.csv")).unwrap();
    run(&["gen-data", "--out-dir", "again"]);
    assert_eq!(first, std::fs::read(d.join("again/train.csv")).unwrap());
    assert_eq!(
        std::fs::read(d.join("data/test.csv")).unwrap(),
        std::fs::read(d.join("again/test.csv")).unwrap()
    );

    run(&["train", "--train", "data/train.csv", "--out", "sym.tree.json", "--report", "fit.json"]);
    let fit = json(&d.join("fit.json"));
    assert!(fit["objective"].as_f64().unwrap() > 0.0);
    let hash = fit["provenance"]["dataset_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(json(&d.join("sym.tree.json"))["provenance"]["dataset_hash"], hash.as_str());

    for kind in ["sparse", "cart", "lintree"] {
        run(&["baseline", "--kind", kind, "--train", "data/train.csv", "--out", &format!("{kind}.tree.json")]);
    }

    run(&["export-milp", "--train", "data/train.csv", "--out", "milp/model.mps"]);
    assert!(d.join("milp/model.names.json").exists());
    let counts = json(&d.join("milp/model.counts.json"));
    assert!(counts["variables"].as_u64().unwrap() > 0);

    let mut labels = Vec::new();
    for (label, ctrl) in [
        ("mpc", "mpc".to_string()),
        ("sym", "model:sym.tree.json".to_string()),
        ("lintree", "model:lintree.tree.json".to_string()),
        ("const", "const:54".to_string()),
    ] {
        run(&[
            "simulate", "--controller", &ctrl, "--out", &format!("{label}.csv"), "--metrics",
            &format!("{label}.metrics.json"), "--test", "data/test.csv", "--label", label,
        ]);
        labels.push(format!("{label}.metrics.json"));
        let trace = std::fs::read_to_string(d.join(format!("{label}.csv"))).unwrap();
        assert!(trace.starts_with("t,x,u,latency_s\n"));
        assert_eq!(trace.lines().count(), 102);
    }
    let mut args = vec!["report", "--out", "report.json", "--csv", "report.csv", "--metrics"];
    args.extend(labels.iter().map(String::as_str));
    run(&args);
    let report = json(&d.join("report.json"));
    assert_eq!(report["dataset_hash"], hash.as_str());
    assert_eq!(report["models"].as_array().unwrap().len(), 4);
    assert_eq!(std::fs::read_to_string(d.join("report.csv")).unwrap().lines().count(), 5);

    // a model trained on other data cannot enter the same report
    run(&["--set", "data.range=[0.2,0.8]", "gen-data", "--out-dir", "other"]);
    run(&["baseline", "--kind", "cart", "--train", "other/train.csv", "--out", "other.tree.json"]);
    run(&["simulate", "--controller", "model:other.tree.json", "--out", "o.csv", "--metrics", "other.metrics.json"]);
    let out = symtree(d, &["report", "--out", "r2.json", "--metrics", "sym.metrics.json", "other.metrics.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different datasets"));
}

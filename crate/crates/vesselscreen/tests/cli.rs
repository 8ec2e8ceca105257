use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_vesselscreen");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").env_remove("VESSELSCREEN_SEED").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn phantom(dir: &Path, n: &str, dims: &str) -> PathBuf {
    ok(&["phantom", "--n", n, "--abnormal-frac", "0.5", "--dims", dims, "--seed", "7", "--out", s(dir)]);
    dir.join("manifest.json")
}

#[test]
fn phantom_reports_counts_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = ok(&["phantom", "--n", "20", "--abnormal-frac", "0.5", "--dims", "21x21x96", "--seed", "7", "--out", s(a.path())]);
    assert!(out.contains("subjects: 20 (10 abnormal, 10 normal)"), "{}", out);
    phantom(b.path(), "20", "21x21x96");
    let fa = files(a.path());
    let fb = files(b.path());
    assert_eq!(fa.len(), fb.len());
    assert!(fa.len() > 20);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(a.path()).unwrap(), y.strip_prefix(b.path()).unwrap());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn phantom_validation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("p");
    let out = run(&["phantom", "--n", "20", "--abnormal-frac", "1.5", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
    let out = run(&["phantom", "--n", "20", "--dims", "21x21", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["phantom", "--n", "5", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = run(&["phantom", "--n", "10", "--dims", "17x17x24", "--out", s(&blocker.join("sub"))]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_with_missing_manifest_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&["train", "--manifest", s(&dir.path().join("none.json")), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn train_with_bad_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = phantom(&dir.path().join("data"), "10", "17x17x24");
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "learning_rate = 1e-3\nmomentum = 0.9\n").unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&["train", "--manifest", s(&manifest), "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!out_dir.exists());
}

fn train(manifest: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--manifest", s(manifest), "--out", s(out), "--lr", "1e-3"];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn train_eval_and_saliency_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = phantom(&dir.path().join("data"), "20", "17x17x24");
    let run_dir = dir.path().join("run");
    train(&manifest, &run_dir, &["--max-epochs", "2"]);
    for i in 0..5 {
        for suffix in [".vnck", "_log.csv", "_predictions.csv"] {
            assert!(run_dir.join(format!("fold_{}{}", i, suffix)).exists(), "fold {} {}", i, suffix);
        }
        let log = std::fs::read_to_string(run_dir.join(format!("fold_{}_log.csv", i))).unwrap();
        let rows: Vec<&str> = log.lines().skip(1).collect();
        assert!(!rows.is_empty() && rows.len() <= 2, "{}", log);
    }
    let folds = std::fs::read_to_string(run_dir.join("folds.csv")).unwrap();
    for line in folds.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let stop = cols[2];
        if cols[1] == "2" {
            assert!(stop == "max_epochs" || stop == "train_acc", "{}", folds);
        } else {
            assert_eq!(stop, "train_acc", "{}", folds);
        }
    }
    let cfg = std::fs::read_to_string(run_dir.join("run_config.txt")).unwrap();
    assert!(cfg.contains("learning_rate = 1e-3"), "{}", cfg);
    assert!(cfg.contains("processing_dimension = 17x17x24"), "{}", cfg);

    let reports = dir.path().join("reports");
    ok(&["eval", "--run", s(&run_dir), "--manifest", s(&manifest), "--localize", "--out", s(&reports)]);
    let metrics = std::fs::read_to_string(reports.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 10, "{}", metrics);
    assert!(reports.join("roc.csv").exists());
    assert!(reports.join("auc.csv").exists());
    let loc = std::fs::read_to_string(reports.join("localization.csv")).unwrap();
    let mut preds = std::collections::HashMap::new();
    for i in 0..5 {
        let text = std::fs::read_to_string(run_dir.join(format!("fold_{}_predictions.csv", i))).unwrap();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            preds.insert(f[0].to_string(), (f[2].to_string(), f[3].parse::<f64>().unwrap()));
        }
    }
    for line in loc.lines().skip(1) {
        let id = line.split(',').next().unwrap();
        if id == "ALL" {
            continue;
        }
        let (label, p) = &preds[id];
        assert_eq!(label, "abnormal");
        assert!(*p >= 0.5);
    }

    let vol = std::fs::read_dir(dir.path().join("data/volumes")).unwrap().next().unwrap().unwrap().path();
    let sal = dir.path().join("sal/map.v3d");
    ok(&["saliency", "--model", s(&run_dir.join("fold_0.vnck")), "--volume", s(&vol), "--tau", "0.5", "--out", s(&sal)]);
    let map = vesselscreen::v3d::read(&sal).unwrap();
    let input = vesselscreen::v3d::read(&vol).unwrap();
    assert_eq!(map.dims, input.dims);
    let mask = vesselscreen::v3d::read(&dir.path().join("sal/map_mask.v3d")).unwrap();
    assert_eq!(mask.dims, input.dims);
    let pgm = std::fs::read(dir.path().join("sal/map_slice.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
}

#[test]
fn saliency_dims_mismatch_prints_both_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = phantom(&dir.path().join("data"), "10", "17x17x24");
    let run_dir = dir.path().join("run");
    train(&manifest, &run_dir, &["--folds", "2", "--max-epochs", "1"]);
    let other = phantom(&dir.path().join("wide"), "10", "19x19x24");
    let vol = other.parent().unwrap().join("volumes/S0001-LAD.v3d");
    let out = run(&["saliency", "--model", s(&run_dir.join("fold_0.vnck")), "--volume", s(&vol), "--out", s(&dir.path().join("m.v3d"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("19x19x") && err.contains("17x17x24"), "{}", err);
}

#[test]
fn training_is_reproducible_and_seed_env_applies() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = phantom(&dir.path().join("data"), "10", "17x17x24");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let extra = ["--folds", "2", "--max-epochs", "1"];
    train(&manifest, &a, &extra);
    train(&manifest, &b, &extra);
    for name in ["fold_0_predictions.csv", "fold_1_predictions.csv", "fold_0.vnck", "fold_0_log.csv", "splits.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{}", name);
    }

    let c = dir.path().join("c");
    let out = Command::new(BIN)
        .args(["train", "--manifest", s(&manifest), "--out", s(&c), "--lr", "1e-3"])
        .args(extra)
        .env("VESSELSCREEN_SEED", "99")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    let cfg = std::fs::read_to_string(c.join("run_config.txt")).unwrap();
    assert!(cfg.contains("seed = 99"), "{}", cfg);

    let d = dir.path().join("d");
    let out = Command::new(BIN)
        .args(["train", "--manifest", s(&manifest), "--out", s(&d), "--lr", "1e-3", "--seed", "5"])
        .args(extra)
        .env("VESSELSCREEN_SEED", "99")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success());
    let cfg = std::fs::read_to_string(d.join("run_config.txt")).unwrap();
    assert!(cfg.contains("seed = 5"), "{}", cfg);
}

#[test]
fn eval_of_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.csv");
    std::fs::write(
        &p,
        "vessel_id,subject_id,true_label,p_abnormal\nA,S1,abnormal,0.9\nB,S2,abnormal,0.8\nC,S3,normal,0.2\nD,S4,normal,0.1\n",
    )
    .unwrap();
    let out = dir.path().join("r");
    ok(&["eval", "--predictions", s(&p), "--out", s(&out)]);
    let auc = std::fs::read_to_string(out.join("auc.csv")).unwrap();
    assert!(auc.lines().any(|l| l == "pooled,1.0000"), "{}", auc);
    let roc = std::fs::read_to_string(out.join("roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr,threshold,auc\n"));
    assert!(roc.lines().skip(1).all(|l| l.ends_with(",1")), "{}", roc);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 10);
}

#[test]
fn eval_single_class_still_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.csv");
    std::fs::write(&p, "vessel_id,subject_id,true_label,p_abnormal\nA,S1,normal,0.3\nB,S2,normal,0.6\n").unwrap();
    let out = dir.path().join("r");
    let res = run(&["eval", "--predictions", s(&p), "--out", s(&out)]);
    assert!(!res.status.success());
    assert!(out.join("metrics.csv").exists());
    assert!(!out.join("roc.csv").exists());
}

#[test]
fn eval_without_inputs_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["eval", "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
}

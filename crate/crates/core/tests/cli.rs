mod common;

use std::path::Path;
use std::process::{Command, Output};

fn smikm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smikm"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn index_query_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    common::write_dataset(&root.join("data"), 3, 3, 21);
    std::fs::write(root.join("cfg.txt"), "vocab_k=6\n").unwrap();

    let out = smikm(
        &["index", "--data", "data", "--out", "idx.smik", "--config", "cfg.txt", "--debug-saliency", "sal"],
        root,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(root.join("sal")).unwrap().count(), 9);

    let out = smikm(&["query", "--index", "idx.smik", "--image", "data/101.png", "--top", "4"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = stdout.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][..2], ["1", "101.png"]);
    let dists: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(dists.windows(2).all(|w| w[0] <= w[1]));

    let out = smikm(&["eval", "--index", "idx.smik", "--report", "report.json"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("report.json")).unwrap()).unwrap();
    let map = report["overall_map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    assert_eq!(report["per_class_map"].as_object().unwrap().len(), 3);
    assert_eq!(report["config"]["vocab_k"], "6");

    let out = smikm(&["eval", "--index", "idx.smik", "--queries", "data", "--report", "r2.json"], root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn corrupt_index_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.smik"), b"JUNKJUNKJUNK").unwrap();
    common::synthetic_image(0, 0).save_png(&dir.path().join("q.png")).unwrap();
    let out = smikm(&["query", "--index", "bad.smik", "--image", "q.png"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn bad_layout_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("notes.txt"), b"x").unwrap();
    let out = smikm(&["index", "--data", ".", "--out", "x.smik"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("layout"));
}

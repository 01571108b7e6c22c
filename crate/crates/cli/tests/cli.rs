use std::path::Path;
use std::process::{Command, Output};

use kdl::{HeadConfig, KernelSpec, ModelConfig};

fn kdl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kdl")).args(args).output().unwrap()
}

fn head_config(dir: &Path, head: HeadConfig) -> String {
    let p = dir.join("model.json");
    std::fs::write(&p, ModelConfig::head_only(2, head, 0).to_json()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn ablation_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = head_config(dir.path(), HeadConfig::fc(8, 3));
    let out = dir.path().join("abl");
    let o = kdl(&[
        "ablation", "--data", "synthetic:spiral:20", "--config", &cfg, "--with-fc", "--max-epochs", "2", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let variants: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["fc", "kdl_n1", "kdl_n2", "kdl_n3"]);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok")));
    for v in variants {
        assert!(out.join(v).join("result.json").exists(), "{v}");
    }
}

#[test]
fn ablation_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    let o = kdl(&["ablation", "--data", "synthetic:spiral:20", "--degrees", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("kdl_n2,,,,,failed"));
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"head\": 3}").unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    assert_eq!(kdl(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(kdl(&["train", "--config", bad.to_str().unwrap(), "--data", "synthetic:blobs", "--out", out]).status.code(), Some(2));
    assert_eq!(kdl(&["train", "--data", "/nonexistent.csv", "--out", out]).status.code(), Some(2));
    assert_eq!(kdl(&["gradcheck", "--eps", "1e-2"]).status.code(), Some(2));
    assert_eq!(kdl(&["bench", "--iters", "0"]).status.code(), Some(2));
}

#[test]
fn overflow_exits_three_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = head_config(dir.path(), HeadConfig::kdl(KernelSpec::polynomial(3), 8, 3));
    let out = dir.path().join("run");
    let o = kdl(&[
        "train", "--config", &cfg, "--data", "synthetic:spiral:20", "--max-epochs", "1", "--init-scale", "1e20", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("epoch 1 batch 0") && err.contains("head.0"), "{err}");
}

#[test]
fn gradcheck_fault_injection_exits_one() {
    assert_eq!(kdl(&["gradcheck"]).status.code(), Some(0));
    assert_eq!(kdl(&["gradcheck", "--inject-fault"]).status.code(), Some(1));
}

#[test]
fn eval_reproduces_recorded_val_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = head_config(dir.path(), HeadConfig::kdl(KernelSpec::polynomial(2), 8, 3));
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let o = kdl(&["train", "--config", &cfg, "--data", "synthetic:blobs:30", "--max-epochs", "3", "--seed", "4", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let result: serde_json::Value = serde_json::from_slice(&std::fs::read(Path::new(out).join("result.json")).unwrap()).unwrap();
    let e = kdl(&["eval", "--weights", out, "--data", "synthetic:blobs:30", "--part", "val"]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let report: serde_json::Value = serde_json::from_slice(&e.stdout).unwrap();
    assert_eq!(report["accuracy"].as_f64(), result["best_val_acc"].as_f64());
}

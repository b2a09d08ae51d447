use std::path::Path;
use std::process::{Command, Output};

fn ncm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncm")).args(args).current_dir(dir).output().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ncm(&["identify"], dir.path()).status.code(), Some(1));
    assert_eq!(ncm(&["gen-data", "--graph", "no_such_graph", "--out", "d.csv"], dir.path()).status.code(), Some(1));
    assert_eq!(ncm(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = ncm(&["estimate", "--data", "missing.csv", "--graph", "bow", "--out", "r.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn generate_then_identify() {
    let dir = tempfile::tempdir().unwrap();
    let gen = ncm(&["gen-data", "--graph", "iv", "--out", "iv.csv", "--n", "500", "--seed", "3"], dir.path());
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    for f in ["iv.csv", "iv.meta.json", "iv.truth.json", "iv.model.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }

    let id = ncm(&["identify", "--data", "iv.csv", "--graph", "iv", "--out", "sym", "--symbolic"], dir.path());
    assert_eq!(id.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("sym/report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "not-identifiable");

    let est = ncm(
        &["estimate", "--data", "iv.csv", "--graph", "iv", "--out", "est.json", "--epochs", "5", "--mc-samples", "64"],
        dir.path(),
    );
    assert!(est.status.success(), "{}", String::from_utf8_lossy(&est.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("est.json")).unwrap()).unwrap();
    assert!(report["exact"].is_f64() && report["ncm_error"].is_f64());
}

//! Exercises the installed binary the way a user would.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchshuffle"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

const TINY: &str = r#"{
    "train": {"epochs": 1, "seeds": [1], "batch_size": 16},
    "data": {"synthetic": {"train": 32, "test": 32, "seed": 7}},
    "eval_batch": 32
}"#;

#[test]
fn run_subcommand_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--epsilon", "0.5", "--patch", "2", "--mode", "full", "--layers", "100", "--seed", "5"])
        .arg("--out")
        .arg(dir.path().join("results"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("results/report.json").exists());
    assert!(dir.path().join("results/curves.csv").exists());

    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("results/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["command"], "run");
    assert_eq!(report["config"]["shuffle"]["epsilon"], 0.5);
    assert_eq!(report["seeds"][0]["seed"], 5);
}

#[test]
fn failed_arm_yields_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "train": {"epochs": 1, "seeds": [1], "batch_size": 16, "lr": 1e200},
            "data": {"synthetic": {"train": 32, "test": 32, "seed": 7}},
            "eval_batch": 32
        }"#,
    );
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("results"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("results/report.json").exists());
}

#[test]
fn bad_config_path_is_an_error() {
    let out = bin()
        .args(["run", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn sweep_subcommand_emits_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--epsilons", "0.5", "--patches", "2"])
        .arg("--out")
        .arg(dir.path().join("grid"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(dir.path().join("grid/grid.csv")).unwrap();
    assert!(grid.starts_with("epsilon,2x2,row_min\n"));
    assert!(grid.contains("\nbaseline,"));
}

#[test]
fn gradcheck_subcommand_reports_pass() {
    let out = bin()
        .args(["gradcheck", "--layers", "111", "--epsilon", "1.0", "--seed", "3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["model"], "lenet_micro");
}

#[test]
fn pollute_subcommand_writes_idx() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "train": {"seeds": [1]},
            "data": {"synthetic": {"train": 16, "test": 16, "seed": 7}},
            "pollution": {"kind": "salt_pepper", "tau1": 0.3, "target": "train_and_test"}
        }"#,
    );
    let out = bin()
        .args(["pollute", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("noisy"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "train-images.idx",
        "train-labels.idx",
        "test-images.idx",
        "test-labels.idx",
    ] {
        assert!(dir.path().join("noisy").join(name).exists(), "{name} missing");
    }
    let v: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    // Hits on already-black background pixels change nothing, so the altered
    // fraction sits well below tau.
    let frac = v["train_altered_fraction"].as_f64().unwrap();
    assert!(frac > 0.08 && frac < 0.3, "altered fraction {frac} looks wrong for tau 0.3");
}

#[test]
fn determinism_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let mut reports = Vec::new();
    for sub in ["a", "b"] {
        let out = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        assert!(out.status.success());
        let mut v: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(sub).join("report.json")).unwrap(),
        )
        .unwrap();
        v["wall_seconds"] = 0.into();
        v["config"]["out_dir"] = "".into();
        reports.push(v);
    }
    assert_eq!(reports[0], reports[1]);
}

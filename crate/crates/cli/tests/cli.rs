use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn specdyn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specdyn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SPECDYN_JOBS")
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn lin_traj_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = specdyn(&["lin-traj"], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cfg = &manifest(tmp.path())["config"];
    assert_eq!(cfg["s"], 1.0);
    assert_eq!(cfg["d"], 1.0);
    assert_eq!(cfg["lambda"], 2.0);
    assert_eq!(cfg["a0"], 0.01);
    assert_eq!(cfg["eta"], 1e-5);
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,omega,loss"));
    let consts: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("constants.json")).unwrap())
            .unwrap();
    for key in ["K", "C", "theta0", "lambda", "s", "d", "tau"] {
        assert!(consts.get(key).is_some(), "{key}");
    }
}

#[test]
fn similarity_out_of_range_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = specdyn(&["meanfield-run", "--set", "gamma=1.5"], tmp.path());
    assert!(!out.status.success());
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["field"], "gamma");
    assert_eq!(report["kind"], "out-of-range");
}

#[test]
fn unknown_and_mistyped_keys_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = specdyn(&["race-phase", "--set", "gamma=0.5"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["kind"], "unknown-key");
    let out = specdyn(&["race-phase", "--set", "s=big"], tmp.path());
    let report: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(
        (report["kind"].as_str(), report["field"].as_str()),
        (Some("type-mismatch"), Some("s"))
    );
}

#[test]
fn race_phase_accepts_reference_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("race.json");
    fs::write(
        &cfg,
        r#"{"s": 105, "a0": 0.01, "eta": 1e-5, "upsilon_escape": 5.0, "upsilon_hit": 1.0,
            "lambda1": {"min": 0, "max": 100, "n": 3}, "lambda2": {"min": 0, "max": 20, "n": 3}}"#,
    )
    .unwrap();
    let out = specdyn(
        &["race-phase", "--config", cfg.to_str().unwrap()],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = manifest(tmp.path());
    assert_eq!(m["config"]["s"], 105);
    let csv = fs::read_to_string(tmp.path().join("phase_grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
}

#[test]
fn outputs_independent_of_jobs_and_reproducible_from_manifest() {
    let small = [
        "entropy-phase",
        "--set",
        "d=60",
        "--set",
        "tau1=2",
        "--set",
        "axis1.n=2",
        "--set",
        "axis2.n=3",
        "--seed",
        "7",
    ];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let mut one = small.to_vec();
    one.extend(["--jobs", "1"]);
    let mut two = small.to_vec();
    two.extend(["--jobs", "2"]);
    assert!(specdyn(&one, a.path()).status.success());
    assert!(specdyn(&two, b.path()).status.success());
    let grid = |d: &Path| fs::read(d.join("result_grid.csv")).unwrap();
    assert_eq!(grid(a.path()), grid(b.path()));
    let m = a.path().join("manifest.json");
    let out = specdyn(
        &["entropy-phase", "--config", m.to_str().unwrap()],
        c.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(grid(a.path()), grid(c.path()));
    let cells = manifest(a.path())["cells"].as_array().unwrap().len();
    assert_eq!(cells, 6);
}

#[test]
fn validate_prints_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = specdyn(
        &[
            "validate",
            "--set",
            "mc_samples=20000",
            "--set",
            "covariances=3",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 6);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}

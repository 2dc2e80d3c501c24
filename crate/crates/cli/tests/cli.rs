use std::path::Path;
use std::process::{Command, Output};

use conelab_cli::checks::{symmetry_invariant, symmetry_operators};
use conelab_cli::ExperimentReport;

fn conelab(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_conelab"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let path = dir.join("config.json");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn report(dir: &Path) -> ExperimentReport {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap()
}

fn csv(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join("out").join(format!("{name}.csv"))).unwrap()
}

const FLAT_1D: &str = r#"{"spectrum": {
    "model": {"preset": "flat", "dim": 1},
    "grid": {"r_min": 0.25, "r_max": 10.25, "n_r": 60, "n_theta": 1, "tube_extent": 1.0, "e_max": 2.0},
    "window": [0.0, 1.0],
    "max_count": 60
}}"#;

#[test]
fn flat_spectrum_is_the_dirichlet_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let out = conelab(&["spectrum"], Some(FLAT_1D), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert!(r.passed);
    assert!(r.results["ladder_max_rel_dev"].as_f64().unwrap() < 1e-10);
    // (1 - cos(k pi / 61)) / dr^2 with dr = 10/61: first level 0.0493...
    let table = csv(dir.path(), "eigenvalues");
    let first: f64 = table.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    let expect = (1.0 - (std::f64::consts::PI / 61.0).cos()) * (6.1f64).powi(2);
    assert!((first - expect).abs() < 1e-10, "{first} {expect}");
}

#[test]
fn empty_window_gives_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = FLAT_1D.replace("[0.0, 1.0]", "[-3.0, -2.0]");
    let out = conelab(&["spectrum"], Some(&cfg), dir.path());
    assert!(out.status.success());
    assert_eq!(csv(dir.path(), "eigenvalues").lines().count(), 1);
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = conelab(&["spectrum"], Some("{\"spectrum\": {\"windw\": [0, 1]}}"), dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("windw") && err.contains("line 1"), "{err}");
}

#[test]
fn invalid_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = FLAT_1D.replace("\"n_r\": 60", "\"n_r\": 5");
    let out = conelab(&["spectrum"], Some(&cfg), dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identical_configs_give_identical_tables() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = r#"{"spectrum": {"grid": {"r_min": 0.25, "r_max": 8.0, "n_r": 24, "n_theta": 16, "tube_extent": 1.0, "e_max": 2.0}}}"#;
    assert!(conelab(&["spectrum"], Some(cfg), a.path()).status.success());
    assert!(conelab(&["spectrum", "--threads", "1"], Some(cfg), b.path()).status.success());
    assert_eq!(csv(a.path(), "eigenvalues"), csv(b.path(), "eigenvalues"));
    let (ra, rb) = (report(a.path()), report(b.path()));
    assert_eq!(ra.config_hash, rb.config_hash);
    assert_eq!(ra.config, rb.config);
}

#[test]
fn embedded_config_reruns_the_same_experiment() {
    let a = tempfile::tempdir().unwrap();
    assert!(conelab(&["spectrum"], Some(FLAT_1D), a.path()).status.success());
    let embedded = serde_json::to_string(&report(a.path()).config).unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(conelab(&["spectrum"], Some(&embedded), b.path()).status.success());
    assert_eq!(report(a.path()).config_hash, report(b.path()).config_hash);
    assert_eq!(csv(a.path(), "eigenvalues"), csv(b.path(), "eigenvalues"));
}

#[test]
fn single_eps_gives_one_row_per_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"lap": {
        "grid": {"r_min": 0.25, "r_max": 8.0, "n_r": 24, "n_theta": 16, "tube_extent": 1.0, "e_max": 2.0},
        "energies": 1, "eps": [0.1], "seeded": 0
    }}"#;
    let out = conelab(&["lap"], Some(cfg), dir.path());
    // A single eps cannot show a plateau, so the run reports a violation.
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(csv(dir.path(), "lap_rows").lines().count(), 2);
}

#[test]
fn mourre_without_angular_potential_is_lambda_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"mourre": {
        "model": {"preset": "flat_short_range", "c": 0.5},
        "grid": {"r_min": 0.25, "r_max": 12.0, "n_r": 40, "n_theta": 16, "tube_extent": 1.0, "e_max": 1.5},
        "refine": null, "max_count": 200
    }}"#;
    let out = conelab(&["mourre"], Some(cfg), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(report(dir.path()).results["alpha_spread"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn mourre_flags_a_window_at_a_critical_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"mourre": {
        "grid": {"r_min": 0.25, "r_max": 12.0, "n_r": 40, "n_theta": 64, "tube_extent": 1.0, "e_max": 1.5},
        "window": [0.9, 1.1], "refine": null, "max_count": 400, "partition": false
    }}"#;
    let out = conelab(&["mourre"], Some(cfg), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r.results["degraded"], serde_json::Value::Bool(true));
    assert_eq!(r.results["window_conflicts"], serde_json::json!([1.0]));
}

#[test]
fn quick_selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = conelab(&["selftest", "--level", "quick"], None, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(csv(dir.path(), "checks").lines().count() > 5);
}

#[test]
fn injected_symmetry_bug_names_the_invariant() {
    let mut ops = symmetry_operators(16).unwrap();
    let (name, p) = &mut ops[0];
    assert_eq!(name, "P");
    // Perturb one off-diagonal entry without its mirror.
    let k = (p.matrix.indptr[3]..p.matrix.indptr[4]).find(|&k| p.matrix.indices[k] != 3).unwrap();
    p.matrix.data[k] += 1e-9;
    let check = symmetry_invariant(name, p);
    assert!(!check.passed);
    assert_eq!(check.name, "symmetry:P");
    assert!(check.detail.contains("1e-9") || check.detail.contains("e-10"), "{}", check.detail);
}

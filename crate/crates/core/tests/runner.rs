use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use cmz::runner::{parse_config, run, RunError, RunOptions};

const BALLS: &str = r#"{
    "experiment": {"kind": "falling-balls", "system": {}, "run": {"n_events": 100000, "burn_in": 1000, "records": true}},
    "seed": 11
}"#;

fn run_in(dir: &Path, text: &str, workers: usize) -> Result<cmz::runner::Manifest, RunError> {
    let config = parse_config(text)?;
    run(&config, &RunOptions { out: Some(dir.to_path_buf()), workers: Some(workers) })
}

fn listed(m: &cmz::runner::Manifest) -> BTreeSet<String> {
    m.files.iter().map(|f| f.path.clone()).collect()
}

fn on_disk(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect()
}

#[test]
fn identical_config_gives_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run_in(a.path(), BALLS, 1).unwrap();
    let mb = run_in(b.path(), BALLS, 3).unwrap();
    assert!(ma.is_final && mb.is_final);
    assert_eq!(ma.files, mb.files);
    for f in &ma.files {
        assert_eq!(fs::read(a.path().join(&f.path)).unwrap(), fs::read(b.path().join(&f.path)).unwrap(), "{}", f.path);
    }
}

#[test]
fn manifest_lists_every_file_with_its_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_in(dir.path(), BALLS, 1).unwrap();
    assert_eq!(listed(&m), on_disk(dir.path()));
    for f in &m.files {
        let bytes = fs::read(dir.path().join(&f.path)).unwrap();
        assert_eq!(bytes.len() as u64, f.bytes);
        assert_eq!(hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes)), f.sha256);
    }
    let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema"], "cmz-manifest/1");
    assert_eq!(v["final"], true);
    assert_eq!(v["kind"], "falling-balls");
}

#[test]
fn tower_and_rv_runs_list_their_outputs() {
    for text in [
        r#"{"experiment": {"kind": "tower-verify", "model": {"source": "synthetic", "tail": {"index": 3.0},
            "rho": 0.5, "n_cells": 200}, "n_max": 2000, "monte_carlo_steps": 100000}, "seed": 2}"#,
        r#"{"experiment": {"kind": "rv-check", "tail": {"index": 2.5, "modifier": "log-power", "beta": 1.0, "cutoff": 3.0}}}"#,
    ] {
        let dir = tempfile::tempdir().unwrap();
        let m = run_in(dir.path(), text, 1).unwrap();
        assert!(m.is_final);
        assert_eq!(listed(&m), on_disk(dir.path()));
    }
}

#[test]
fn sigma_one_model_has_unit_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"experiment": {"kind": "tower-verify", "model": {"source": "cells", "rho": 0.5, "two_sided": false,
        "cells": [{"mass": 0.5, "sigma": 1, "R": [1]}, {"mass": 0.3, "sigma": 1, "R": [4]}, {"mass": 0.2, "sigma": 1, "R": [17]}]},
        "n_max": 40}}"#;
    run_in(dir.path(), text, 1).unwrap();
    let mut r = csv::Reader::from_path(dir.path().join("ratio_a_over_h.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["n", "A", "H", "ratio"]);
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        assert_eq!(rec[1], rec[2]);
        assert_eq!(rec[3].parse::<f64>().unwrap(), 1.0);
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn exhausted_wall_budget_gives_non_final_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"experiment": {"kind": "tower-verify", "model": {"source": "synthetic", "tail": {"index": 3.0},
        "rho": 0.5, "n_cells": 200}, "n_max": 2000, "monte_carlo_steps": 100000}, "max_wall_seconds": 1e-9}"#;
    let m = run_in(dir.path(), text, 1).unwrap();
    assert!(!m.is_final);
    assert!(m.stages.iter().any(|s| s.status == cmz::runner::StageStatus::Skipped));
    assert_eq!(listed(&m), on_disk(dir.path()));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(v["final"], false);
}

#[test]
fn invalid_configs_name_the_field() {
    let cases = [
        (r#"{"experiment": {"kind": "falling-balls", "run": {"n_events": 0}}}"#, "experiment.run.n_events"),
        (r#"{"experiment": {"kind": "falling-balls", "run": {"n_evnts": 10}}}"#, "experiment.run"),
        (r#"{"experiment": {"kind": "flowers", "table": {"arcs": []}, "run": {"n_events": 10}}}"#, "experiment.table"),
        (r#"{"experiment": {"kind": "nonsense"}}"#, "experiment"),
    ];
    for (text, field) in cases {
        let err = parse_config(text).and_then(|c| c.validate()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(field), "{msg} should name {field}");
    }
}

#[test]
fn failed_run_still_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // A short run never sees returns this long, so the width fit has no points.
    let text = r#"{"experiment": {"kind": "curves-diagnostics", "system": {"kind": "falling-balls"}, "n_events": 2000,
        "ks": [500, 900]}}"#;
    assert!(run_in(dir.path(), text, 1).is_err());
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(v["final"], false);
    assert!(v["error"].is_string());
    let files: BTreeSet<String> =
        v["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap().to_string()).collect();
    assert_eq!(files, on_disk(dir.path()));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let config = cmz::runner::load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 7);
}

#[test]
fn cli_validate_config_reports_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"experiment": {"kind": "falling-balls", "run": {"n_events": 0}}}"#).unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_cmz")).arg("validate-config").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("experiment.run.n_events"));
    let missing = std::process::Command::new(env!("CARGO_BIN_EXE_cmz"))
        .arg("validate-config")
        .arg(dir.path().join("nope.json"))
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.json"));
}

#[test]
fn cli_run_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"experiment": {"kind": "rv-check", "tail": {"index": 2.0}}}"#).unwrap();
    let out_dir = dir.path().join("out");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_cmz"))
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .args(["--workers", "1"])
        .status()
        .unwrap();
    assert!(status.success());
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(v["workers"], 1);
    assert_eq!(v["final"], true);
}

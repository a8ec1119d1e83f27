use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const PUSHES: &str = "experiment.n_pushes=12";

fn capstep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capstep"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails_with(out: &Output, code: i32) -> String {
    assert_eq!(out.status.code(), Some(code), "stdout: {}", String::from_utf8_lossy(&out.stdout));
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn calibrated(dir: &Path) -> PathBuf {
    ok(&capstep(dir, &["calibrate"]));
    dir.join("gait_params.json")
}

fn run_all(dir: &Path, out: &str) -> Vec<PathBuf> {
    ok(&capstep(dir, &["--set", PUSHES, "run", "--controllers", "all", "--out", out]));
    ["none", "timing", "timing-step", "timing-step-learning"]
        .iter()
        .map(|k| dir.join(out).join(format!("{k}-s1.json")))
        .collect()
}

#[test]
fn calibration_writes_ordered_gait_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let path = calibrated(dir.path());
    let first = fs::read(&path).unwrap();
    let v: Value = serde_json::from_slice(&first).unwrap();
    let (alpha, delta) = (v["gait"]["alpha"].as_f64().unwrap(), v["gait"]["delta"].as_f64().unwrap());
    assert!(delta > alpha && alpha > 0.0, "alpha {alpha}, delta {delta}");
    ok(&capstep(dir.path(), &["calibrate"]));
    assert_eq!(fs::read(&path).unwrap(), first);
}

#[test]
fn broken_gait_files_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = calibrated(dir.path());
    let mut v: Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
    v["gait"].as_object_mut().unwrap().remove("delta");
    fs::write(&path, v.to_string()).unwrap();
    let err = fails_with(&capstep(dir.path(), &["run", "--controller", "timing"]), 2);
    assert!(err.contains("gait") && err.contains("delta"), "{err}");

    v["gait"]["delta"] = Value::from("wide");
    fs::write(&path, v.to_string()).unwrap();
    let err = fails_with(&capstep(dir.path(), &["run", "--controller", "timing"]), 2);
    assert!(err.contains("gait.delta"), "{err}");
}

#[test]
fn missing_gait_file_points_at_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails_with(&capstep(dir.path(), &["run", "--controller", "timing"]), 3);
    assert!(err.contains("capstep calibrate"), "{err}");
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("lab.json"), r#"{"plant": {"latency": "slow"}}"#).unwrap();
    let err = fails_with(&capstep(dir.path(), &["--config", "lab.json", "calibrate"]), 2);
    assert!(err.contains("plant.latency"), "{err}");

    let err = fails_with(&capstep(dir.path(), &["--set", "grid.eta=-1", "--print-config"]), 2);
    assert!(err.contains("grid.eta"), "{err}");

    let err = fails_with(&capstep(dir.path(), &["--set", "grid.eta", "--print-config"]), 2);
    assert!(err.contains("section.field=value"), "{err}");
}

#[test]
fn unknown_controllers_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = fails_with(&capstep(dir.path(), &["run", "--controller", "step"]), 2);
    assert!(err.contains("step"), "{err}");
}

#[test]
fn printed_config_reflects_the_layers() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("lab.json"), r#"{"experiment": {"seed": 5, "n_pushes": 7}}"#).unwrap();
    let out = ok(&capstep(
        dir.path(),
        &["--config", "lab.json", "--set", "experiment.seed=6", "--print-config"],
    ));
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["experiment"]["seed"], 6);
    assert_eq!(v["experiment"]["n_pushes"], 7);
    assert_eq!(v["plant"]["latency"], 0.02);

    let defaults: Value = serde_json::from_str(&ok(&capstep(dir.path(), &["--print-config"]))).unwrap();
    let shipped: Value =
        serde_json::from_str(&fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../config/defaults.json")).unwrap())
            .unwrap();
    assert_eq!(defaults, shipped);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    calibrated(dir.path());
    let a = run_all(dir.path(), "a");
    let b = run_all(dir.path(), "b");
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
        let (xc, yc) = (x.with_extension("csv"), y.with_extension("csv"));
        assert_eq!(fs::read(xc).unwrap(), fs::read(yc).unwrap());
    }
    assert!(dir.path().join("a/timing-step-learning-s1.grid.csv").exists());
}

#[test]
fn analysis_artifacts_cover_every_controller() {
    let dir = tempfile::tempdir().unwrap();
    calibrated(dir.path());
    let logs = run_all(dir.path(), "runs");
    let mut args: Vec<String> = vec!["analyze".into()];
    args.extend(logs.iter().map(|p| p.display().to_string()));

    let with = |artifact: &str| {
        let mut a = args.clone();
        a.extend(["--artifact".into(), artifact.into(), "--out".into(), "fig".into()]);
        ok(&capstep(dir.path(), &a.iter().map(String::as_str).collect::<Vec<_>>()))
    };

    let text = with("heatmap");
    assert_eq!(text.lines().count(), 4, "{text}");
    let svg = fs::read_to_string(dir.path().join("fig/heatmap.svg")).unwrap();
    assert_eq!(svg.matches("<clipPath id=\"panel").count(), 4);

    let text = with("energy");
    assert_eq!(text.lines().count(), 4, "{text}");
    let table = fs::read_to_string(dir.path().join("fig/efficiency.csv")).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(table.starts_with("controller,efficiency_percent"));

    let text = with("fallprob");
    assert!(text.contains("falls"), "{text}");
    let csv = fs::read_to_string(dir.path().join("fig/fallprob.csv")).unwrap();
    let trials: usize = csv
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("timing,"))
        .map(|l| l.split(',').nth(3).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(trials, 12);
}

#[test]
fn csv_paths_are_accepted_for_analysis() {
    let dir = tempfile::tempdir().unwrap();
    calibrated(dir.path());
    let logs = run_all(dir.path(), "runs");
    let csv = logs[1].with_extension("csv");
    ok(&capstep(
        dir.path(),
        &["analyze", csv.to_str().unwrap(), "--artifact", "fallprob", "--out", "fig"],
    ));
}

#[test]
fn empty_and_foreign_logs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    calibrated(dir.path());
    let logs = run_all(dir.path(), "runs");
    let json = &logs[1];

    let mut v: Value = serde_json::from_slice(&fs::read(json).unwrap()).unwrap();
    v["pushes"] = Value::Array(vec![]);
    let empty = dir.path().join("runs/empty.json");
    fs::write(&empty, v.to_string()).unwrap();
    fs::copy(json.with_extension("csv"), empty.with_extension("csv")).unwrap();
    let err = fails_with(
        &capstep(dir.path(), &["analyze", "runs/empty.json", "--artifact", "fallprob"]),
        3,
    );
    assert!(err.contains("no pushes"), "{err}");

    let text = fs::read_to_string(json).unwrap().replace("capstep-log/1", "capstep-log/0");
    fs::write(json, text).unwrap();
    let err = fails_with(
        &capstep(dir.path(), &["analyze", json.to_str().unwrap(), "--artifact", "energy"]),
        2,
    );
    assert!(err.contains("capstep-log/0"), "{err}");
}

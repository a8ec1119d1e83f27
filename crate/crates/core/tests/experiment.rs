use std::fs;

use capstep_core::balance::{ControllerKind, OpenLoopNominals};
use capstep_core::calibration::{calibrate, Calibration, CalibrationSettings};
use capstep_core::experiment::{
    run_experiment, run_experiment_with_grid, ExperimentConfig, ExperimentLog, LogError, RecordKind,
};
use capstep_core::learning::GridApproximator;
use capstep_core::plant::PlantConfig;

fn calibration(plant: &PlantConfig) -> Calibration {
    calibrate(plant, &OpenLoopNominals::default(), plant.c_plant, &CalibrationSettings::default()).unwrap()
}

fn config(kind: ControllerKind, n: usize) -> ExperimentConfig {
    let plant = PlantConfig::default();
    ExperimentConfig {
        n_pushes: n,
        ..ExperimentConfig::new(kind, calibration(&plant), plant, 11)
    }
}

#[test]
fn identical_configs_write_identical_files() {
    let cfg = config(ControllerKind::TimingStepLearning, 25);
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&cfg).unwrap().write(dir.path(), "a").unwrap();
    let b = run_experiment(&cfg).unwrap().write(dir.path(), "b").unwrap();
    assert_eq!(fs::read(&a.0).unwrap(), fs::read(&b.0).unwrap());
    assert_eq!(fs::read(&a.1).unwrap(), fs::read(&b.1).unwrap());
}

#[test]
fn logs_round_trip_through_their_files() {
    let cfg = config(ControllerKind::Timing, 15);
    let log = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (_, json) = log.write(dir.path(), "run").unwrap();
    let back = ExperimentLog::read(&json).unwrap();
    assert_eq!(back, log);
    assert_eq!(back.meta.config_hash, cfg.hash());
    assert_eq!(back.pushes.len(), cfg.n_pushes);
}

#[test]
fn foreign_schema_is_rejected() {
    let log = run_experiment(&config(ControllerKind::Timing, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (_, json) = log.write(dir.path(), "run").unwrap();
    let text = fs::read_to_string(&json).unwrap().replace("capstep-log/1", "capstep-log/9");
    fs::write(&json, text).unwrap();
    match ExperimentLog::read(&json) {
        Err(LogError::Schema { found, .. }) => assert_eq!(found, "capstep-log/9"),
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn mirrored_experiment_is_the_mirror_image() {
    let cfg = config(ControllerKind::TimingStepLearning, 20);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg.mirrored()).unwrap();
    assert_eq!(a.pushes.len(), b.pushes.len());
    for (p, q) in a.pushes.iter().zip(&b.pushes) {
        assert_eq!(p.impulse, -q.impulse);
        assert_eq!(p.fell, q.fell);
        assert_eq!(p.state_after, q.state_after);
        assert_eq!(p.side, q.side.opposite());
    }
    assert_eq!(a.trace.len(), b.trace.len());
    for (r, s) in a.trace.iter().zip(&b.trace) {
        assert_eq!((r.record, r.y, r.vy, r.cmd_f), (s.record, s.y, s.vy, s.cmd_f));
        assert_eq!(r.side, s.side.opposite());
    }
    assert_eq!(a.grid, b.grid);
}

#[test]
fn gentle_pushes_never_topple_the_open_loop_gait() {
    let cfg = ExperimentConfig {
        impulse_range: (-0.3, 0.3),
        ..config(ControllerKind::NoFeedback, 40)
    };
    let log = run_experiment(&cfg).unwrap();
    assert_eq!(log.fall_count(), 0);
    assert_eq!(log.unattributed_falls, 0);
}

#[test]
fn falls_reset_and_pushes_stay_attributed() {
    let log = run_experiment(&config(ControllerKind::NoFeedback, 30)).unwrap();
    assert!(log.fall_count() > 0);
    for p in log.pushes.iter().filter(|p| p.fell) {
        let t = p.time_to_fall.expect("fall time");
        assert!(t >= 0.0 && t <= log.meta.config.plant.recovery_time);
        assert!(p.recovery_steps.is_none());
        let fall = log
            .trace
            .iter()
            .find(|r| r.record == RecordKind::Fall && r.push == Some(p.index))
            .expect("fall row");
        assert!((fall.time - p.push_time - t).abs() < 1e-9);
    }
}

#[test]
fn frozen_learning_leaves_the_grid_untouched() {
    let mut grid = GridApproximator::new(Default::default()).unwrap();
    grid.fill(0.004);
    let cfg = ExperimentConfig {
        freeze_learning: true,
        ..config(ControllerKind::TimingStepLearning, 10)
    };
    let log = run_experiment_with_grid(&cfg, Some(grid.clone())).unwrap();
    assert_eq!(log.grid.as_ref().unwrap().values(), grid.values());
    assert_eq!(log.learning.updates, 0);
}

#[test]
fn learning_updates_happen_and_stay_bounded() {
    let log = run_experiment(&config(ControllerKind::TimingStepLearning, 40)).unwrap();
    assert!(log.learning.updates > 100, "{:?}", log.learning);
    assert!(log.learning.max_abs_value < 0.1, "{:?}", log.learning);
    assert!(log.learning.skipped_disturbed > 0);
}

use std::fs;
use std::path::PathBuf;

use taskinfer::controller::CaseLabel;
use taskinfer::regressor::TargetKind;
use taskinfer::simkit::analyze::analyze_dir;
use taskinfer::simkit::scenario::{EstimatorKind, Scenario};
use taskinfer::simkit::{export, load_scenario, run, run_estimation};

fn load(name: &str) -> Scenario {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"));
    load_scenario(p).unwrap()
}

#[test]
fn bundled_scenarios_load() {
    let six_obstacles = load("six_obstacles");
    assert_eq!(six_obstacles.robots.len(), 1);
    assert_eq!(six_obstacles.static_obstacles.len(), 6);
    assert_eq!(load("multirobot").robots.len(), 5);
}

#[test]
fn closed_form_tracks_oracle_on_every_bundled_trajectory() {
    for name in ["six_obstacles", "two_active", "headon", "multirobot"] {
        let sc = load(name);
        let log = run(&sc).unwrap();
        assert!(log.max_closed_form_gap <= 1e-8, "{name}: {}", log.max_closed_form_gap);
        assert!(log.min_distance >= sc.safety.d_s - sc.dist_tol(), "{name}");
    }
}

#[test]
fn six_obstacles_passes_obstacles_one_at_a_time() {
    let sc = load("six_obstacles");
    let log = run(&sc).unwrap();
    let labels: Vec<CaseLabel> = log.steps.iter().map(|s| s.robots[0].case_label).collect();
    assert!(labels.iter().all(|c| matches!(c, CaseLabel::K0 | CaseLabel::K1)));
    assert!(labels.contains(&CaseLabel::K1));
    assert_eq!(*labels.last().unwrap(), CaseLabel::K0);
}

#[test]
fn two_active_has_one_two_active_window_then_none() {
    let sc = load("two_active");
    let log = run(&sc).unwrap();
    let counts: Vec<usize> = log.steps.iter().map(|s| s.robots[0].active.len()).collect();
    let window = counts.iter().take_while(|&&n| n == 2).count();
    assert!(window > 0);
    assert!(counts[window..].iter().all(|&n| n == 0));
}

#[test]
fn export_row_counts_and_margin() {
    let sc = load("multirobot");
    let log = run(&sc).unwrap();
    let est = run_estimation(&sc, &log, TargetKind::Goal, &[EstimatorKind::Ao]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(dir.path(), &sc, &log, Some(&est)).unwrap();
    let traj = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count() - 1, log.steps.len() * sc.robots.len());
    let est_rows = fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
    assert_eq!(est_rows.lines().count() - 1, log.steps.len() * sc.robots.len());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let margin = summary["min_margin"].as_f64().unwrap();
    assert!(margin >= summary["margin_floor"].as_f64().unwrap());
    assert_eq!(summary["robots"].as_array().unwrap().len(), 5);
}

#[test]
fn disabling_ukf_leaves_ao_bytes_unchanged() {
    let sc = load("six_obstacles");
    let log = run(&sc).unwrap();
    let rows = |est: &[EstimatorKind]| -> Vec<String> {
        let e = run_estimation(&sc, &log, TargetKind::Goal, est).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export(dir.path(), &sc, &log, Some(&e)).unwrap();
        fs::read_to_string(dir.path().join("estimates.csv"))
            .unwrap()
            .lines()
            .filter(|l| l.contains(",ao,"))
            .map(str::to_owned)
            .collect()
    };
    let both = rows(&[EstimatorKind::Ao, EstimatorKind::Ukf]);
    assert!(!both.is_empty());
    assert_eq!(both, rows(&[EstimatorKind::Ao]));
}

#[test]
fn analyze_reports_window_excitation() {
    let sc = load("two_active");
    let log = run(&sc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export(dir.path(), &sc, &log, None).unwrap();
    // the two-active window carries no information about the goal
    let early = analyze_dir(dir.path(), (None, Some(2.0))).unwrap();
    assert_eq!(early[0].excitation.lambda_min, 0.0);
    assert!(early[0].excitation.drift_undefined);
    let late = analyze_dir(dir.path(), (Some(3.0), None)).unwrap();
    assert!(late[0].excitation.lambda_min > 1.0);
    assert_eq!(late[0].timeline.first().unwrap().case, CaseLabel::KmR2);
}

#[test]
fn gain_target_converges_on_six_obstacles() {
    let sc = load("six_obstacles");
    let log = run(&sc).unwrap();
    let est = run_estimation(&sc, &log, TargetKind::Gain, &[EstimatorKind::Ao, EstimatorKind::Ukf]).unwrap();
    for r in &est.runs {
        assert!(r.failure.is_none());
        assert_eq!(r.theta_true, vec![sc.robots[0].params.k_p]);
        assert!(r.final_error() < r.records[0].err_norm.max(1.0));
    }
}

//! CSV and JSON export. Every float is written with 12 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::regressor::TargetKind;

use super::estimation::{case_segments, CaseSegment, EstimateLog};
use super::scenario::{EstimatorKind, Scenario};
use super::world::TrajectoryLog;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// `v` in scientific notation with 12 significant digits.
pub fn fmt12(v: f64) -> String {
    format!("{v:.11e}")
}

/// `v` rounded to 12 significant digits; non-finite values pass through.
pub fn round12(v: f64) -> f64 {
    if v.is_finite() {
        fmt12(v).parse().unwrap_or(v)
    } else {
        v
    }
}

fn finite12(v: f64) -> Option<f64> {
    v.is_finite().then(|| round12(v))
}

pub fn theta_columns(target: TargetKind) -> &'static [&'static str] {
    match target {
        TargetKind::Goal => &["theta_x", "theta_y"],
        TargetKind::Gain => &["theta_kp"],
    }
}

pub fn trajectory_csv(log: &TrajectoryLog) -> String {
    let mut out = String::from("t,robot_id,px,py,ux,uy,case,active_ids\n");
    for step in &log.steps {
        for (id, r) in log.robot_ids.iter().zip(&step.robots) {
            let active: Vec<String> = r.active.iter().map(|j| j.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{id},{},{},{},{},{},{}",
                fmt12(step.t),
                fmt12(r.x.x),
                fmt12(r.x.y),
                fmt12(r.u_star.x),
                fmt12(r.u_star.y),
                r.case_label,
                active.join(";")
            );
        }
    }
    out
}

/// Rows are grouped by robot id, then estimator, then time.
pub fn estimates_csv(est: &EstimateLog) -> String {
    let mut out = String::from("t,robot_id,estimator,");
    for c in theta_columns(est.target) {
        out.push_str(c);
        out.push(',');
    }
    out.push_str("err_norm,lambda_min_q\n");
    for run in &est.runs {
        for rec in &run.records {
            let _ = write!(out, "{},{},{},", fmt12(rec.t), run.robot_id, run.estimator.as_str());
            for v in &rec.theta_hat {
                let _ = write!(out, "{},", fmt12(*v));
            }
            let lq = rec.lambda_min_q.map(fmt12).unwrap_or_default();
            let _ = writeln!(out, "{},{lq}", fmt12(rec.err_norm));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub target: TargetKind,
    pub theta_true: Vec<f64>,
    pub theta0: Vec<f64>,
    pub final_theta: Vec<f64>,
    pub final_error: f64,
    pub t_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixed_case_updates: Option<usize>,
    pub case_timeline: Vec<CaseSegment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobotSummary {
    pub id: u32,
    pub final_position: [f64; 2],
    pub goal_distance: f64,
    /// Controller-side case timeline.
    pub case_timeline: Vec<CaseSegment>,
    pub estimators: Vec<EstimatorSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub steps: usize,
    pub t_end: f64,
    pub early_stopped: bool,
    /// Smallest distance between any two bodies; absent with nothing to collide.
    pub min_margin: Option<f64>,
    pub margin_floor: f64,
    pub max_closed_form_gap: f64,
    pub robots: Vec<RobotSummary>,
}

fn rounded_segments(mut segs: Vec<CaseSegment>) -> Vec<CaseSegment> {
    for s in &mut segs {
        s.t_start = round12(s.t_start);
        s.t_end = round12(s.t_end);
    }
    segs
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| round12(*x)).collect()
}

pub fn summarize(scenario: &Scenario, log: &TrajectoryLog, est: Option<&EstimateLog>) -> Summary {
    let robots = scenario
        .robots
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let labels: Vec<_> = log.steps.iter().map(|s| s.robots[k].case_label).collect();
            let estimators = est
                .map(|e| {
                    e.runs
                        .iter()
                        .filter(|r| r.robot_id == spec.id)
                        .map(|r| EstimatorSummary {
                            estimator: r.estimator,
                            target: r.target,
                            theta_true: rounded(&r.theta_true),
                            theta0: rounded(&r.theta0),
                            final_theta: rounded(r.final_theta()),
                            final_error: round12(r.final_error()),
                            t_c: r.t_c.map(round12),
                            mixed_case_updates: r.mixed_case_updates,
                            case_timeline: rounded_segments(r.case_timeline(log.dt)),
                            failure: r.failure.clone(),
                        })
                        .collect()
                })
                .unwrap_or_default();
            let p = log.final_positions[k];
            RobotSummary {
                id: spec.id,
                final_position: [round12(p.x), round12(p.y)],
                goal_distance: round12((p - spec.params.goal).norm()),
                case_timeline: rounded_segments(case_segments(&labels, log.dt)),
                estimators,
            }
        })
        .collect();
    Summary {
        scenario: scenario.clone(),
        steps: log.steps.len(),
        t_end: round12(log.t_end()),
        early_stopped: log.early_stopped,
        min_margin: finite12(log.min_distance),
        margin_floor: round12(scenario.safety.d_s - scenario.dist_tol()),
        max_closed_form_gap: round12(log.max_closed_form_gap),
        robots,
    }
}

/// Writes `trajectory.csv`, `summary.json` and, with estimates, `estimates.csv`.
pub fn export(
    out_dir: impl AsRef<Path>,
    scenario: &Scenario,
    log: &TrajectoryLog,
    est: Option<&EstimateLog>,
) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TRAJECTORY_FILE), trajectory_csv(log))?;
    if let Some(e) = est {
        fs::write(dir.join(ESTIMATES_FILE), estimates_csv(e))?;
    }
    let summary = summarize(scenario, log, est);
    let mut json = serde_json::to_string_pretty(&summary)
        .map_err(|e| crate::Error::Validation(format!("summary serialization: {e}")))?;
    json.push('\n');
    fs::write(dir.join(SUMMARY_FILE), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt12(1.0), "1.00000000000e0");
        assert_eq!(fmt12(-0.00123456789012345), "-1.23456789012e-3");
        assert_eq!(round12(0.1 + 0.2), 0.3);
        assert!(round12(f64::NAN).is_nan());
    }

    #[test]
    fn theta_headers_follow_target() {
        assert_eq!(theta_columns(TargetKind::Goal).len(), 2);
        assert_eq!(theta_columns(TargetKind::Gain), &["theta_kp"]);
    }
}

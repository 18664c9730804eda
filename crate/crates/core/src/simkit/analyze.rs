//! Offline excitation analysis of an output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::controller::{build_constraints, CaseLabel};
use crate::error::{Error, Result};
use crate::linalg::{Vec2, DEFAULT_RANK_TOL};
use crate::regressor::{
    build_regressor, detect_active_set, excitation_gram, ExcitationReport, GSample, TargetKind,
};

use super::estimation::{case_segments, CaseSegment};
use super::export::{SUMMARY_FILE, TRAJECTORY_FILE};
use super::scenario::Scenario;
use super::world::ego_obstacles;

#[derive(Debug, Clone, Deserialize)]
struct EstimatorEntry {
    estimator: String,
    target: TargetKind,
    t_c: Option<f64>,
    final_error: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct RobotEntry {
    id: u32,
    estimators: Vec<EstimatorEntry>,
}

#[derive(Debug, Clone, Deserialize)]
struct SummaryIn {
    scenario: Scenario,
    robots: Vec<RobotEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotAnalysis {
    pub id: u32,
    pub target: TargetKind,
    pub excitation: ExcitationReport,
    /// Observer-side timeline recomputed from the logged velocities.
    pub timeline: Vec<CaseSegment>,
    /// `(estimator, t_c, final_error)` from the summary.
    pub estimators: Vec<(String, Option<f64>, f64)>,
}

struct Row {
    x: Vec2,
    u: Vec2,
}

fn parse_field(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{TRAJECTORY_FILE}:{line}: bad number {field:?}")))
}

/// Rows grouped by step, each in the summary's robot order.
fn read_trajectory(path: &Path, robots: usize) -> Result<Vec<Vec<Row>>> {
    let text = fs::read_to_string(path)?;
    let mut steps: Vec<Vec<Row>> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Parse(format!("{TRAJECTORY_FILE}:{}: expected 8 columns", i + 1)));
        }
        let row = Row {
            x: Vec2::new(parse_field(f[2], i + 1)?, parse_field(f[3], i + 1)?),
            u: Vec2::new(parse_field(f[4], i + 1)?, parse_field(f[5], i + 1)?),
        };
        match steps.last_mut() {
            Some(s) if s.len() < robots => s.push(row),
            _ => steps.push(vec![row]),
        }
    }
    if steps.last().is_some_and(|s| s.len() != robots) {
        return Err(Error::Parse(format!("{TRAJECTORY_FILE}: truncated final step")));
    }
    Ok(steps)
}

/// Recomputes `G` along the logged trajectory and integrates its Gram matrix
/// over `[t_from, t_to)`, or the whole run when unset.
pub fn analyze_dir(
    dir: impl AsRef<Path>,
    window: (Option<f64>, Option<f64>),
) -> Result<Vec<RobotAnalysis>> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(SUMMARY_FILE))?;
    let summary: SummaryIn =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{SUMMARY_FILE}: {e}")))?;
    let scenario = summary.scenario;
    scenario.validate()?;
    let n_robots = scenario.robots.len();
    let steps = read_trajectory(&dir.join(TRAJECTORY_FILE), n_robots)?;
    let dt = scenario.dt;

    let mut out = Vec::with_capacity(n_robots);
    for (k, spec) in scenario.robots.iter().enumerate() {
        let entry = summary.robots.iter().find(|r| r.id == spec.id);
        let target_kind = entry
            .and_then(|r| r.estimators.first())
            .map(|e| e.target)
            .unwrap_or(scenario.estimation.target);
        let target = target_kind.for_robot(&spec.params);

        let mut samples = Vec::new();
        let mut labels: Vec<CaseLabel> = Vec::with_capacity(steps.len());
        for (n, step) in steps.iter().enumerate() {
            let positions: Vec<Vec2> = step.iter().map(|r| r.x).collect();
            let x = positions[k];
            let obstacles = ego_obstacles(&positions, &scenario.static_obstacles, k);
            let cons = build_constraints(x, &obstacles, &scenario.safety)?;
            let active = detect_active_set(&cons, step[k].u, scenario.estimation.eps_active);
            let reg = build_regressor(x, &cons, &active, &target, DEFAULT_RANK_TOL)?;
            labels.push(reg.case_label);
            let t = n as f64 * dt;
            let inside = window.0.is_none_or(|a| t >= a - 0.5 * dt)
                && window.1.is_none_or(|b| t < b - 0.5 * dt);
            if inside {
                samples.push(GSample::from((&reg, t)));
            }
        }
        out.push(RobotAnalysis {
            id: spec.id,
            target: target_kind,
            excitation: excitation_gram(&samples, dt)?,
            timeline: case_segments(&labels, dt),
            estimators: entry
                .map(|r| {
                    r.estimators
                        .iter()
                        .map(|e| (e.estimator.clone(), e.t_c, e.final_error))
                        .collect()
                })
                .unwrap_or_default(),
        });
    }
    Ok(out)
}

pub fn render(report: &[RobotAnalysis]) -> String {
    let mut s = String::new();
    for r in report {
        let ex = &r.excitation;
        let _ = writeln!(s, "robot {} (target {})", r.id, r.target.as_str());
        let _ = writeln!(
            s,
            "  window [{:.4}, {:.4}) s  lambda_min(Q) {:.6e}",
            ex.window.0, ex.window.1, ex.lambda_min
        );
        if ex.drift_undefined {
            let _ = writeln!(s, "  null-space drift {:.6e} rad (KM_R2 instants present)", ex.nullspace_drift_rad);
        } else {
            let _ = writeln!(s, "  null-space drift {:.6e} rad", ex.nullspace_drift_rad);
        }
        let segs: Vec<String> = r
            .timeline
            .iter()
            .map(|g| format!("{}[{:.3},{:.3})", g.case, g.t_start, g.t_end))
            .collect();
        let _ = writeln!(s, "  cases {}", segs.join(" "));
        for (name, t_c, err) in &r.estimators {
            let tc = t_c.map_or("never".to_string(), |t| format!("{t:.4} s"));
            let _ = writeln!(s, "  {name}: t_c {tc}, final error {err:.6e}");
        }
    }
    s
}

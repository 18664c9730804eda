//! Runs the enabled estimators for every robot over a recorded trajectory.
//!
//! Robots are independent once the trajectory is fixed, so each
//! (robot, estimator) pair runs on its own thread; results come back in
//! robot-id order, then estimator order.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::{build_constraints, classify_case, CaseLabel};
use crate::error::{Error, Result};
use crate::linalg::{Vec2, DEFAULT_RANK_TOL};
use crate::observer::{ao_init, ao_step};
use crate::regressor::{build_regressor, detect_active_set, TargetKind, TargetParam};
use crate::ukf::{ukf_init, ukf_step, UkfSnapshot};

use super::scenario::{EstimatorKind, RobotSpec, Scenario, VelocitySource};
use super::world::{ego_obstacles, TrajectoryLog};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    /// Time after the update.
    pub t: f64,
    pub theta_hat: Vec<f64>,
    pub err_norm: f64,
    /// AO only.
    pub lambda_min_q: Option<f64>,
}

/// Maximal run of one observer-side case label over `[t_start, t_end)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseSegment {
    pub case: CaseLabel,
    pub t_start: f64,
    pub t_end: f64,
}

pub fn case_segments(labels: &[CaseLabel], dt: f64) -> Vec<CaseSegment> {
    let mut out: Vec<CaseSegment> = Vec::new();
    for (n, &case) in labels.iter().enumerate() {
        let t_end = (n + 1) as f64 * dt;
        match out.last_mut() {
            Some(seg) if seg.case == case => seg.t_end = t_end,
            _ => out.push(CaseSegment {
                case,
                t_start: n as f64 * dt,
                t_end,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotEstimate {
    pub robot_id: u32,
    pub estimator: EstimatorKind,
    pub target: TargetKind,
    pub theta_true: Vec<f64>,
    pub theta0: Vec<f64>,
    /// One record per completed update.
    pub records: Vec<EstimateRecord>,
    /// Observer-side case per update.
    pub cases: Vec<CaseLabel>,
    pub t_c: Option<f64>,
    /// UKF only.
    pub mixed_case_updates: Option<usize>,
    /// Set when the estimator stopped early on an error.
    pub failure: Option<String>,
}

impl RobotEstimate {
    pub fn final_theta(&self) -> &[f64] {
        self.records
            .last()
            .map(|r| r.theta_hat.as_slice())
            .unwrap_or(&self.theta0)
    }

    pub fn final_error(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.err_norm)
            .unwrap_or_else(|| err_norm(&self.theta0, &self.theta_true))
    }

    pub fn case_timeline(&self, dt: f64) -> Vec<CaseSegment> {
        case_segments(&self.cases, dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateLog {
    pub target: TargetKind,
    pub estimators: Vec<EstimatorKind>,
    /// Ordered by robot id, then estimator.
    pub runs: Vec<RobotEstimate>,
}

impl EstimateLog {
    pub fn get(&self, robot_id: u32, estimator: EstimatorKind) -> Option<&RobotEstimate> {
        self.runs
            .iter()
            .find(|r| r.robot_id == robot_id && r.estimator == estimator)
    }
}

fn err_norm(theta: &[f64], truth: &[f64]) -> f64 {
    theta
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn initial_guess(robot: &RobotSpec, target: TargetKind) -> DVector<f64> {
    match target {
        TargetKind::Goal => robot.goal_guess().to_dvector(),
        TargetKind::Gain => DVector::from_element(1, robot.gain_guess()),
    }
}

/// Measured velocities of robot slot `k`, one per logged step.
fn measured_velocities(scenario: &Scenario, log: &TrajectoryLog, k: usize) -> Vec<Vec2> {
    let n = log.steps.len();
    let mut u: Vec<Vec2> = match scenario.estimation.velocity {
        VelocitySource::Exact => log.steps.iter().map(|s| s.robots[k].u_star).collect(),
        VelocitySource::FiniteDifference => (0..n)
            .map(|i| (log.position(i + 1, k) - log.position(i, k)) / log.dt)
            .collect(),
    };
    let std = scenario.estimation.velocity_noise_std;
    if std > 0.0 {
        let seed = scenario.seed ^ (u64::from(log.robot_ids[k]) << 32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("std validated finite and non-negative");
        for v in &mut u {
            *v += Vec2::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    u
}

struct Job<'a> {
    slot: usize,
    robot: &'a RobotSpec,
    estimator: EstimatorKind,
}

fn run_job(scenario: &Scenario, log: &TrajectoryLog, target_kind: TargetKind, job: &Job<'_>) -> RobotEstimate {
    let target = target_kind.for_robot(&job.robot.params);
    let theta0 = initial_guess(job.robot, target_kind);
    let mut out = RobotEstimate {
        robot_id: job.robot.id,
        estimator: job.estimator,
        target: target_kind,
        theta_true: target.true_theta(&job.robot.params).as_slice().to_vec(),
        theta0: theta0.as_slice().to_vec(),
        records: Vec::with_capacity(log.steps.len()),
        cases: Vec::with_capacity(log.steps.len()),
        t_c: None,
        mixed_case_updates: None,
        failure: None,
    };
    let result = match job.estimator {
        EstimatorKind::Ao => run_ao(scenario, log, job.slot, &target, theta0, &mut out),
        EstimatorKind::Ukf => run_ukf(scenario, log, job.slot, &target, theta0, &mut out),
    };
    if let Err(e) = result {
        out.failure = Some(e.to_string());
    }
    out
}

fn ego_snapshot(scenario: &Scenario, log: &TrajectoryLog, n: usize, slot: usize) -> (Vec2, Vec<Vec2>) {
    let positions = log.positions_at(n);
    let obstacles = ego_obstacles(&positions, &scenario.static_obstacles, slot);
    (positions[slot], obstacles)
}

fn run_ao(
    scenario: &Scenario,
    log: &TrajectoryLog,
    slot: usize,
    target: &TargetParam,
    theta0: DVector<f64>,
    out: &mut RobotEstimate,
) -> Result<()> {
    let cfg = scenario.ao_config();
    let velocities = measured_velocities(scenario, log, slot);
    let mut s = ao_init(theta0, log.position(0, slot), &cfg)?;
    for (n, u) in velocities.iter().enumerate() {
        let (x, obstacles) = ego_snapshot(scenario, log, n, slot);
        let cons = build_constraints(x, &obstacles, &scenario.safety)?;
        let active = detect_active_set(&cons, *u, scenario.estimation.eps_active);
        let reg = build_regressor(x, &cons, &active, target, DEFAULT_RANK_TOL)?;
        s = ao_step(&s, x, *u, &reg, &cfg)?;
        out.cases.push(reg.case_label);
        out.t_c = s.t_c;
        let theta_hat = s.theta_hat.as_slice().to_vec();
        out.records.push(EstimateRecord {
            t: (n + 1) as f64 * log.dt,
            err_norm: err_norm(&theta_hat, &out.theta_true),
            theta_hat,
            lambda_min_q: Some(s.lambda_min_q()),
        });
    }
    Ok(())
}

fn run_ukf(
    scenario: &Scenario,
    log: &TrajectoryLog,
    slot: usize,
    target: &TargetParam,
    theta0: DVector<f64>,
    out: &mut RobotEstimate,
) -> Result<()> {
    let cfg = scenario.ukf_config();
    let velocities = measured_velocities(scenario, log, slot);
    let mut s = ukf_init(theta0, &cfg)?;
    for (n, u) in velocities.iter().enumerate() {
        let (x, obstacles) = ego_snapshot(scenario, log, n, slot);
        let cons = build_constraints(x, &obstacles, &scenario.safety)?;
        let active = detect_active_set(&cons, *u, scenario.estimation.eps_active);
        out.cases.push(classify_case(&cons, &active, DEFAULT_RANK_TOL));
        let snapshot = UkfSnapshot {
            x,
            obstacles: &obstacles,
            safety: scenario.safety,
            target: *target,
        };
        s = ukf_step(&s, &snapshot, *u, &cfg)?;
        out.mixed_case_updates = Some(s.mixed_case_updates);
        let theta_hat = s.mean.as_slice().to_vec();
        out.records.push(EstimateRecord {
            t: (n + 1) as f64 * log.dt,
            err_norm: err_norm(&theta_hat, &out.theta_true),
            theta_hat,
            lambda_min_q: None,
        });
    }
    Ok(())
}

/// Runs `estimators` for `target` on every robot of `log`.
pub fn run_estimation(
    scenario: &Scenario,
    log: &TrajectoryLog,
    target: TargetKind,
    estimators: &[EstimatorKind],
) -> Result<EstimateLog> {
    if log.robot_ids.len() != scenario.robots.len() {
        return Err(Error::DimensionMismatch(format!(
            "log has {} robots, scenario has {}",
            log.robot_ids.len(),
            scenario.robots.len()
        )));
    }
    let mut estimators = estimators.to_vec();
    estimators.sort();
    estimators.dedup();
    let jobs: Vec<Job<'_>> = scenario
        .robots
        .iter()
        .enumerate()
        .flat_map(|(slot, robot)| {
            estimators.iter().map(move |&estimator| Job {
                slot,
                robot,
                estimator,
            })
        })
        .collect();
    let runs = jobs
        .par_iter()
        .map(|job| run_job(scenario, log, target, job))
        .collect();
    Ok(EstimateLog {
        target,
        estimators,
        runs,
    })
}

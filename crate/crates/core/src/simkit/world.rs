//! Deterministic world stepping.
//!
//! Every robot solves its safety QP against a frozen snapshot of the step's
//! start, then all robots advance together with an Euler step.

use crate::controller::{
    build_constraints, nominal_control, solve_closed_form, solve_qp_oracle, CaseLabel,
    ConstraintSet,
};
use crate::error::{Error, Result};
use crate::linalg::Vec2;

use super::scenario::Scenario;

/// Slack on `b_j` before a state counts as already unsafe.
pub const UNSAFE_B_TOL: f64 = 1e-9;
/// Distance to goal under which a robot counts as arrived.
pub const ARRIVAL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub t: f64,
    pub step: usize,
    /// Ordered as `Scenario::robots`.
    pub positions: Vec<Vec2>,
}

impl World {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            t: 0.0,
            step: 0,
            positions: scenario.robots.iter().map(|r| r.start).collect(),
        }
    }
}

/// Obstacles seen by robot `ego`: other robots by ascending id, then the
/// static obstacles. Row `j` of the ego's constraint set refers to entry `j`.
pub fn ego_obstacles(positions: &[Vec2], statics: &[Vec2], ego: usize) -> Vec<Vec2> {
    positions
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != ego)
        .map(|(_, p)| *p)
        .chain(statics.iter().copied())
        .collect()
}

pub fn ego_constraints(scenario: &Scenario, positions: &[Vec2], ego: usize) -> Result<ConstraintSet> {
    let obstacles = ego_obstacles(positions, &scenario.static_obstacles, ego);
    build_constraints(positions[ego], &obstacles, &scenario.safety)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotStep {
    pub x: Vec2,
    pub u_hat: Vec2,
    pub u_star: Vec2,
    pub case_label: CaseLabel,
    /// Constraint rows, in the ego's obstacle ordering.
    pub active: Vec<usize>,
    pub mu: Vec<f64>,
    /// `‖u_closed − u_oracle‖` for the oracle's active set.
    pub closed_form_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub robots: Vec<RobotStep>,
    /// Smallest robot-robot or robot-obstacle distance at `t`.
    pub min_distance: f64,
}

fn min_distance(positions: &[Vec2], statics: &[Vec2]) -> f64 {
    let mut d = f64::INFINITY;
    for (i, p) in positions.iter().enumerate() {
        for q in &positions[i + 1..] {
            d = d.min((*p - *q).norm());
        }
        for o in statics {
            d = d.min((*p - *o).norm());
        }
    }
    d
}

/// Advances the world by one step and returns each robot's solution.
pub fn step_world(world: &World, scenario: &Scenario) -> Result<(World, StepRecord)> {
    let mut robots = Vec::with_capacity(world.positions.len());
    for (ego, spec) in scenario.robots.iter().enumerate() {
        let x = world.positions[ego];
        let cons = ego_constraints(scenario, &world.positions, ego)?;
        if let Some((j, c)) = cons
            .rows()
            .iter()
            .enumerate()
            .find(|(_, c)| c.b < -UNSAFE_B_TOL)
        {
            return Err(Error::SafetyViolation {
                t: world.t,
                detail: format!("robot {} starts the step inside obstacle {j} (b = {:e})", spec.id, c.b),
            });
        }
        let u_hat = nominal_control(x, &spec.params);
        let sol = solve_qp_oracle(&cons, u_hat)?;
        let u_closed = solve_closed_form(sol.case_label, &cons, &sol.active, u_hat)?;
        robots.push(RobotStep {
            x,
            u_hat,
            u_star: sol.u_star,
            case_label: sol.case_label,
            active: sol.active,
            mu: sol.mu,
            closed_form_gap: (u_closed - sol.u_star).norm(),
        });
    }

    let positions: Vec<Vec2> = robots
        .iter()
        .map(|r| r.x + r.u_star * scenario.dt)
        .collect();
    let next = World {
        t: (world.step + 1) as f64 * scenario.dt,
        step: world.step + 1,
        positions,
    };
    let d_next = min_distance(&next.positions, &scenario.static_obstacles);
    if d_next < scenario.safety.d_s - scenario.dist_tol() {
        return Err(Error::SafetyViolation {
            t: next.t,
            detail: format!(
                "minimum distance {d_next} below d_s − dist_tol = {}",
                scenario.safety.d_s - scenario.dist_tol()
            ),
        });
    }
    let record = StepRecord {
        t: world.t,
        robots,
        min_distance: min_distance(&world.positions, &scenario.static_obstacles),
    };
    Ok((next, record))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub robot_ids: Vec<u32>,
    pub steps: Vec<StepRecord>,
    /// Positions after the last logged step.
    pub final_positions: Vec<Vec2>,
    /// Over every logged state including the final one.
    pub min_distance: f64,
    pub max_closed_form_gap: f64,
    pub early_stopped: bool,
}

impl TrajectoryLog {
    pub fn t_end(&self) -> f64 {
        self.steps.len() as f64 * self.dt
    }

    /// Position of robot slot `k` at step `n`, where `n == steps.len()` gives
    /// the final position.
    pub fn position(&self, n: usize, k: usize) -> Vec2 {
        match self.steps.get(n) {
            Some(s) => s.robots[k].x,
            None => self.final_positions[k],
        }
    }

    pub fn positions_at(&self, n: usize) -> Vec<Vec2> {
        (0..self.robot_ids.len()).map(|k| self.position(n, k)).collect()
    }
}

fn all_arrived(world: &World, scenario: &Scenario) -> bool {
    world
        .positions
        .iter()
        .zip(&scenario.robots)
        .all(|(p, r)| (*p - r.params.goal).norm() < ARRIVAL_TOL)
}

pub fn run(scenario: &Scenario) -> Result<TrajectoryLog> {
    let mut world = World::new(scenario);
    let n_steps = scenario.steps();
    let mut steps = Vec::with_capacity(n_steps);
    let mut early_stopped = false;
    for _ in 0..n_steps {
        if scenario.early_stop && all_arrived(&world, scenario) {
            early_stopped = true;
            break;
        }
        let (next, record) = step_world(&world, scenario)?;
        steps.push(record);
        world = next;
    }
    let final_d = min_distance(&world.positions, &scenario.static_obstacles);
    Ok(TrajectoryLog {
        dt: scenario.dt,
        robot_ids: scenario.robots.iter().map(|r| r.id).collect(),
        min_distance: steps.iter().map(|s| s.min_distance).fold(final_d, f64::min),
        max_closed_form_gap: steps
            .iter()
            .flat_map(|s| s.robots.iter().map(|r| r.closed_form_gap))
            .fold(0.0, f64::max),
        steps,
        final_positions: world.positions,
        early_stopped,
    })
}

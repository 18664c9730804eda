//! Scenario files, world simulation, the estimation harness and exports.

pub mod analyze;
pub mod estimation;
pub mod export;
pub mod scenario;
pub mod selftest;
pub mod world;

pub use estimation::{run_estimation, EstimateLog, RobotEstimate};
pub use export::export;
pub use scenario::{load_scenario, EstimatorKind, Scenario};
pub use world::{run, step_world, TrajectoryLog, World};

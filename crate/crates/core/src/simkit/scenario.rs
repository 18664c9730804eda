//! Scenario files: strict JSON with an explicit `version`.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{SafetyConfig, TaskParams};
use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::observer::AoConfig;
use crate::regressor::TargetKind;
use crate::ukf::UkfConfig;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Ao,
    Ukf,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Ao => "ao",
            EstimatorKind::Ukf => "ukf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "ao" => Some(EstimatorKind::Ao),
            "ukf" => Some(EstimatorKind::Ukf),
            _ => None,
        }
    }
}

/// How the observer obtains velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocitySource {
    /// The commanded `u*` of each step.
    #[default]
    Exact,
    /// `(x_{n+1} − x_n)/dt`, available one step late.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AoSettings {
    pub k_w: f64,
    pub gamma: f64,
    pub ie_threshold: f64,
}

impl Default for AoSettings {
    fn default() -> Self {
        let d = AoConfig::default();
        Self {
            k_w: d.k_w,
            gamma: d.gamma_gain,
            ie_threshold: d.ie_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UkfSettings {
    pub p0: f64,
    pub q_proc: f64,
    pub r_meas: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfSettings {
    fn default() -> Self {
        let d = UkfConfig::default();
        Self {
            p0: d.p0,
            q_proc: d.q_proc,
            r_meas: d.r_meas,
            alpha: d.alpha,
            beta: d.beta,
            kappa: d.kappa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSettings {
    pub target: TargetKind,
    pub estimators: Vec<EstimatorKind>,
    pub ao: AoSettings,
    pub ukf: UkfSettings,
    pub eps_active: f64,
    pub velocity: VelocitySource,
    /// Standard deviation of Gaussian noise added to measured velocities.
    pub velocity_noise_std: f64,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self {
            target: TargetKind::Goal,
            estimators: vec![EstimatorKind::Ao, EstimatorKind::Ukf],
            ao: AoSettings::default(),
            ukf: UkfSettings::default(),
            eps_active: 1e-6,
            velocity: VelocitySource::Exact,
            velocity_noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: u32,
    pub start: Vec2,
    pub params: TaskParams,
    /// Initial goal estimate `θ⁰`; defaults to the start position.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_guess: Option<Vec2>,
    /// Initial gain estimate `θ⁰`; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_guess: Option<f64>,
}

impl RobotSpec {
    pub fn goal_guess(&self) -> Vec2 {
        self.goal_guess.unwrap_or(self.start)
    }

    pub fn gain_guess(&self) -> f64 {
        self.gain_guess.unwrap_or(1.0)
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub dt: f64,
    pub t_final: f64,
    pub safety: SafetyConfig,
    /// Sorted by ascending id after validation.
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub static_obstacles: Vec<Vec2>,
    #[serde(default)]
    pub estimation: EstimationSettings,
    #[serde(default)]
    pub seed: u64,
    /// Allowed discretization slack on `D_s`; defaults to `dt` metres.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist_tol: Option<f64>,
    /// Stop once every robot is within 1e-3 m of its goal.
    #[serde(default = "default_true")]
    pub early_stop: bool,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Validation(format!("{field}: {msg}"))
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be a positive number, got {v}")))
    }
}

fn check_point(field: &str, v: Vec2) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, "must be finite"))
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut s: Scenario =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        s.robots.sort_by_key(|r| r.id);
        Ok(s)
    }

    pub fn dist_tol(&self) -> f64 {
        self.dist_tol.unwrap_or(self.dt)
    }

    /// Number of simulation steps up to `t_final`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn ao_config(&self) -> AoConfig {
        let a = &self.estimation.ao;
        AoConfig {
            k_w: a.k_w,
            gamma_gain: a.gamma,
            ie_threshold: a.ie_threshold,
            dt: self.dt,
        }
    }

    pub fn ukf_config(&self) -> UkfConfig {
        let u = &self.estimation.ukf;
        UkfConfig {
            p0: u.p0,
            q_proc: u.q_proc,
            r_meas: u.r_meas,
            alpha: u.alpha,
            beta: u.beta,
            kappa: u.kappa,
            dt: self.dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENARIO_VERSION {
            return Err(invalid(
                "version",
                format!("unsupported version {}, expected {SCENARIO_VERSION}", self.version),
            ));
        }
        check_positive("dt", self.dt)?;
        check_positive("t_final", self.t_final)?;
        if self.t_final < self.dt {
            return Err(invalid("t_final", "must be at least dt"));
        }
        check_positive("safety.d_s", self.safety.d_s)?;
        check_positive("safety.gamma", self.safety.gamma)?;
        if let Some(tol) = self.dist_tol {
            check_positive("dist_tol", tol)?;
        }
        if self.robots.is_empty() {
            return Err(invalid("robots", "at least one robot is required"));
        }

        let mut ids = HashSet::new();
        for (i, r) in self.robots.iter().enumerate() {
            if !ids.insert(r.id) {
                return Err(invalid(&format!("robots[{i}].id"), format!("duplicate id {}", r.id)));
            }
            check_point(&format!("robots[{i}].start"), r.start)?;
            check_point(&format!("robots[{i}].params.goal"), r.params.goal)?;
            check_positive(&format!("robots[{i}].params.k_p"), r.params.k_p)?;
            if let Some(g) = r.goal_guess {
                check_point(&format!("robots[{i}].goal_guess"), g)?;
            }
            if let Some(g) = r.gain_guess {
                if !g.is_finite() {
                    return Err(invalid(&format!("robots[{i}].gain_guess"), "must be finite"));
                }
            }
        }
        for (k, o) in self.static_obstacles.iter().enumerate() {
            check_point(&format!("static_obstacles[{k}]"), *o)?;
        }

        let d_s = self.safety.d_s;
        for (i, a) in self.robots.iter().enumerate() {
            for b in &self.robots[i + 1..] {
                let d = (a.start - b.start).norm();
                if d < d_s {
                    return Err(invalid(
                        "robots.start",
                        format!("robots {} and {} start {d} apart, closer than d_s = {d_s}", a.id, b.id),
                    ));
                }
            }
            for (k, o) in self.static_obstacles.iter().enumerate() {
                let d = (a.start - *o).norm();
                if d < d_s {
                    return Err(invalid(
                        "static_obstacles",
                        format!("robot {} starts {d} from obstacle {k}, closer than d_s = {d_s}", a.id),
                    ));
                }
            }
        }

        let est = &self.estimation;
        check_positive("estimation.eps_active", est.eps_active)?;
        if !(est.velocity_noise_std.is_finite() && est.velocity_noise_std >= 0.0) {
            return Err(invalid("estimation.velocity_noise_std", "must be >= 0"));
        }
        check_positive("estimation.ao.k_w", est.ao.k_w)?;
        check_positive("estimation.ao.gamma", est.ao.gamma)?;
        check_positive("estimation.ao.ie_threshold", est.ao.ie_threshold)?;
        self.ukf_config()
            .validate()
            .map_err(|e| invalid("estimation.ukf", e))?;
        Ok(())
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Scenario::from_json(&text)
}

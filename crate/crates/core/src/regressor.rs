//! Observer-side analysis: active-set detection, the parameter-affine form
//! `u* = G(x)θ + f(x)`, and excitation diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{active_branch, classify_case, Branch, CaseLabel, ConstraintSet, TaskParams};
use crate::error::{Error, Result};
use crate::linalg::{min_eig_sym, SymP, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Goal,
    Gain,
}

impl TargetKind {
    pub fn dim(self) -> usize {
        match self {
            TargetKind::Goal => 2,
            TargetKind::Gain => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Goal => "goal",
            TargetKind::Gain => "gain",
        }
    }

    /// Target parameter for a robot, with the other parameter taken as known.
    pub fn for_robot(self, params: &TaskParams) -> TargetParam {
        match self {
            TargetKind::Goal => TargetParam::Goal { k_p: params.k_p },
            TargetKind::Gain => TargetParam::Gain { goal: params.goal },
        }
    }
}

/// Parameter being identified, carrying the assumed-known complement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetParam {
    /// `θ = x_d` with known `k_p`.
    Goal { k_p: f64 },
    /// `θ = k_p` with known `x_d`.
    Gain { goal: Vec2 },
}

impl TargetParam {
    pub fn kind(&self) -> TargetKind {
        match self {
            TargetParam::Goal { .. } => TargetKind::Goal,
            TargetParam::Gain { .. } => TargetKind::Gain,
        }
    }

    pub fn dim(&self) -> usize {
        self.kind().dim()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TargetParam::Goal { k_p } if !(k_p.is_finite() && k_p > 0.0) => {
                Err(Error::InvalidConfig(format!("known k_p must be > 0, got {k_p}")))
            }
            TargetParam::Gain { goal } if !goal.is_finite() => {
                Err(Error::InvalidConfig("known goal must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// The true `θ` of a robot with these task parameters.
    pub fn true_theta(&self, params: &TaskParams) -> DVector<f64> {
        match self {
            TargetParam::Goal { .. } => params.goal.to_dvector(),
            TargetParam::Gain { .. } => DVector::from_element(1, params.k_p),
        }
    }

    /// Nominal control `û(x; θ)` with the complement filled in.
    pub fn nominal(&self, x: Vec2, theta: &DVector<f64>) -> Vec2 {
        match *self {
            TargetParam::Goal { k_p } => (x - Vec2::from_column(theta)) * -k_p,
            TargetParam::Gain { goal } => (x - goal) * -theta[0],
        }
    }
}

/// `u* = G θ + f` for one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    /// `2×p`.
    pub g: DMatrix<f64>,
    pub f: Vec2,
    pub case_label: CaseLabel,
    /// Null-space direction `V₁` for the `K1`/`KM_R1` cases.
    pub v1: Option<Vec2>,
}

impl Regressor {
    pub fn predict(&self, theta: &DVector<f64>) -> Vec2 {
        Vec2::from_column(&(&self.g * theta)) + self.f
    }

    pub fn dim(&self) -> usize {
        self.g.ncols()
    }
}

/// Rows whose residual at the measured velocity is below `eps`.
pub fn detect_active_set(cons: &ConstraintSet, u_meas: Vec2, eps: f64) -> Vec<usize> {
    cons.rows()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.residual(u_meas).abs() < eps)
        .map(|(j, _)| j)
        .collect()
}

fn outer(a: Vec2, b: Vec2) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a.x * b.x, a.x * b.y, a.y * b.x, a.y * b.y])
}

fn column(v: Vec2) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 1, &[v.x, v.y])
}

pub fn build_regressor(
    x: Vec2,
    cons: &ConstraintSet,
    active: &[usize],
    target: &TargetParam,
    rank_tol: f64,
) -> Result<Regressor> {
    target.validate()?;
    let case_label = classify_case(cons, active, rank_tol);
    let branch = active_branch(case_label, cons, active, rank_tol)?;
    let p = target.dim();
    let (g, f, v1) = match (branch, *target) {
        (Branch::Free, TargetParam::Goal { k_p }) => {
            (DMatrix::identity(2, 2) * k_p, x * -k_p, None)
        }
        (Branch::Free, TargetParam::Gain { goal }) => (column(goal - x), Vec2::ZERO, None),
        (Branch::Line { v1, v2, offset }, TargetParam::Goal { k_p }) => {
            let proj = outer(v2, v2);
            (proj * k_p, offset - v2 * (k_p * v2.dot(x)), Some(v1))
        }
        (Branch::Line { v1, v2, offset }, TargetParam::Gain { goal }) => {
            (column(v2 * -v2.dot(x - goal)), offset, Some(v1))
        }
        (Branch::Pinned { u }, _) => (DMatrix::zeros(2, p), u, None),
    };
    Ok(Regressor {
        g,
        f,
        case_label,
        v1,
    })
}

/// One time sample of the regressor for excitation analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct GSample {
    pub t: f64,
    pub g: DMatrix<f64>,
    pub case_label: CaseLabel,
    pub v1: Option<Vec2>,
}

impl From<(&Regressor, f64)> for GSample {
    fn from((r, t): (&Regressor, f64)) -> Self {
        GSample {
            t,
            g: r.g.clone(),
            case_label: r.case_label,
            v1: r.v1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationReport {
    /// Left-Riemann sum of `GᵀG dt`.
    pub gram: SymP,
    pub lambda_min: f64,
    /// Largest line angle of `V₁` from its first sample over `K1`/`KM_R1`
    /// instants; 0 when there are none.
    pub nullspace_drift_rad: f64,
    /// Set when the window contains `KM_R2` instants, where `G = 0` has no
    /// meaningful null-space line.
    pub drift_undefined: bool,
    pub window: (f64, f64),
}

pub fn excitation_gram(samples: &[GSample], dt: f64) -> Result<ExcitationReport> {
    let first = samples.first().ok_or(Error::EmptyWindow)?;
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::InvalidConfig(format!("dt must be > 0, got {dt}")));
    }
    let mut gram = SymP::zeros(first.g.ncols())?;
    for s in samples {
        gram = gram.add_scaled(&SymP::gram_of(&s.g)?, dt)?;
    }
    let v1_series: Vec<Vec2> = samples
        .iter()
        .filter(|s| matches!(s.case_label, CaseLabel::K1 | CaseLabel::KmR1))
        .filter_map(|s| s.v1)
        .collect();
    let last = samples.last().unwrap_or(first);
    Ok(ExcitationReport {
        lambda_min: min_eig_sym(&gram),
        gram,
        nullspace_drift_rad: nullspace_drift(&v1_series),
        drift_undefined: samples.iter().any(|s| s.case_label == CaseLabel::KmR2),
        window: (first.t, last.t + dt),
    })
}

/// Maximum angle between the line spanned by each sample and the first one.
/// `v` and `−v` span the same line, so the result lies in `[0, π/2]`.
pub fn nullspace_drift(v1_series: &[Vec2]) -> f64 {
    let Some(&first) = v1_series.first() else {
        return 0.0;
    };
    v1_series
        .iter()
        .map(|v| first.cross(*v).abs().atan2(first.dot(*v).abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{build_constraints, solve_qp_oracle, Constraint, SafetyConfig};
    use crate::linalg::DEFAULT_RANK_TOL;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn detect_examples() {
        let c = ConstraintSet::from_rows(vec![Constraint { a: Vec2::new(0.5, 0.0), b: 0.0 }]);
        assert_eq!(detect_active_set(&c, Vec2::new(0.0, 1.0), 1e-6), vec![0]);

        let c = ConstraintSet::from_rows(vec![
            Constraint { a: Vec2::new(1.0, 0.0), b: 0.5 },
            Constraint { a: Vec2::new(0.0, 1.0), b: 0.2 },
        ]);
        assert!(detect_active_set(&c, Vec2::ZERO, 1e-6).is_empty());

        let row = Constraint { a: Vec2::new(0.3, 0.4), b: 0.1 };
        let c = ConstraintSet::from_rows(vec![row, row]);
        let u = Vec2::new(0.2, 0.1);
        assert_eq!(detect_active_set(&c, u, 1e-6), vec![0, 1]);
    }

    #[test]
    fn k0_goal_regressor() {
        let target = TargetParam::Goal { k_p: 2.0 };
        let r = build_regressor(Vec2::new(1.0, 1.0), &ConstraintSet::default(), &[], &target, DEFAULT_RANK_TOL)
            .unwrap();
        assert_eq!(r.g, DMatrix::identity(2, 2) * 2.0);
        assert_eq!(r.f, Vec2::new(-2.0, -2.0));
        assert_eq!(r.case_label, CaseLabel::K0);
    }

    #[test]
    fn k1_goal_regressor_matches_oracle() {
        let cfg = SafetyConfig::new(0.5, 1.0).unwrap();
        let x = Vec2::ZERO;
        let cons = build_constraints(x, &[Vec2::new(0.5, 0.0)], &cfg).unwrap();
        let params = TaskParams::new(Vec2::new(1.0, 1.0), 1.0).unwrap();
        let sol = solve_qp_oracle(&cons, crate::controller::nominal_control(x, &params)).unwrap();
        let target = TargetParam::Goal { k_p: 1.0 };
        let r = build_regressor(x, &cons, &sol.active, &target, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r.g, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(r.f, Vec2::ZERO);
        let u = r.predict(&target.true_theta(&params));
        assert!((u - Vec2::new(0.0, 1.0)).norm() < 1e-15);
        assert!((u - sol.u_star).norm() < 1e-15);
    }

    #[test]
    fn km_r2_regressor_is_zero_for_both_targets() {
        let cfg = SafetyConfig::new(0.5, 1.0).unwrap();
        let obs = [Vec2::new(0.5, 0.0), Vec2::new(0.0, 0.5)];
        let cons = build_constraints(Vec2::ZERO, &obs, &cfg).unwrap();
        for target in [TargetParam::Goal { k_p: 1.3 }, TargetParam::Gain { goal: Vec2::new(2.0, 2.0) }] {
            let r = build_regressor(Vec2::ZERO, &cons, &[0, 1], &target, DEFAULT_RANK_TOL).unwrap();
            assert_eq!(r.case_label, CaseLabel::KmR2);
            assert!(r.g.iter().all(|&v| v == 0.0));
            assert!(r.f.norm() < 1e-15);
        }
    }

    #[test]
    fn gain_regressor_vanishes_when_goal_offset_parallel_to_v1() {
        let cfg = SafetyConfig::new(0.5, 1.0).unwrap();
        let x = Vec2::ZERO;
        // obstacle straight between robot and goal
        let cons = build_constraints(x, &[Vec2::new(0.6, 0.0)], &cfg).unwrap();
        let target = TargetParam::Gain { goal: Vec2::new(3.0, 0.0) };
        let r = build_regressor(x, &cons, &[0], &target, DEFAULT_RANK_TOL).unwrap();
        assert!(r.g.norm() <= 1e-8);
    }

    #[test]
    fn gram_examples() {
        let zero = GSample { t: 0.0, g: DMatrix::zeros(2, 2), case_label: CaseLabel::KmR2, v1: None };
        let rep = excitation_gram(&vec![zero; 10], 0.1).unwrap();
        assert_eq!(rep.lambda_min, 0.0);
        assert!(rep.drift_undefined);

        let dt = 0.01;
        let samples: Vec<GSample> = (0..100)
            .map(|i| GSample {
                t: i as f64 * dt,
                g: DMatrix::identity(2, 2) * 2.0,
                case_label: CaseLabel::K0,
                v1: None,
            })
            .collect();
        let rep = excitation_gram(&samples, dt).unwrap();
        assert!((rep.lambda_min - 4.0).abs() < 1e-12);
        assert_eq!(rep.nullspace_drift_rad, 0.0);
        assert!((rep.window.1 - 1.0).abs() < 1e-12);

        assert!(matches!(excitation_gram(&[], dt), Err(Error::EmptyWindow)));
    }

    #[test]
    fn drift_examples() {
        assert_eq!(nullspace_drift(&[Vec2::new(1.0, 0.0); 5]), 0.0);
        let series: Vec<Vec2> = (0..=10)
            .map(|i| {
                let a = FRAC_PI_4 * i as f64 / 10.0;
                Vec2::new(a.cos(), a.sin())
            })
            .collect();
        assert!((nullspace_drift(&series) - FRAC_PI_4).abs() < 1e-12);
        assert_eq!(nullspace_drift(&[Vec2::new(1.0, 0.0), Vec2::new(-1.0, 0.0)]), 0.0);
    }
}

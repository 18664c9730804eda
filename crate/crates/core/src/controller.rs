//! CBF-QP safety filter for a single-integrator robot.
//!
//! The ego robot solves
//!
//! ```text
//! min ‖u − û‖²   s.t.  a_jᵀ u ≤ b_j,   a_j = −(x − x_j),  b_j = (γ/2)(‖x − x_j‖² − D_s²)
//! ```
//!
//! Two independent solvers live here: [`solve_qp_oracle`] enumerates active
//! subsets and certifies the KKT conditions, while [`solve_closed_form`]
//! evaluates the SVD branch formulas for the detected case. They must agree.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pinv_k2, rot90, svd_k2, MatK2, Vec2, DEFAULT_RANK_TOL};

/// Smallest admissible robot-obstacle separation or constraint normal.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Goal position and proportional gain of the nominal controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskParams {
    pub goal: Vec2,
    pub k_p: f64,
}

impl TaskParams {
    pub fn new(goal: Vec2, k_p: f64) -> Result<Self> {
        let p = Self { goal, k_p };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.goal.is_finite() {
            return Err(Error::InvalidConfig("goal must be finite".into()));
        }
        if !(self.k_p.is_finite() && self.k_p > 0.0) {
            return Err(Error::InvalidConfig(format!("k_p must be > 0, got {}", self.k_p)));
        }
        Ok(())
    }
}

/// Safety margin `D_s` and CBF gain `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    pub d_s: f64,
    pub gamma: f64,
}

impl SafetyConfig {
    pub fn new(d_s: f64, gamma: f64) -> Result<Self> {
        let c = Self { d_s, gamma };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_s.is_finite() && self.d_s > 0.0) {
            return Err(Error::InvalidConfig(format!("d_s must be > 0, got {}", self.d_s)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// One CBF row `aᵀu ≤ b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub a: Vec2,
    pub b: f64,
}

impl Constraint {
    pub fn residual(&self, u: Vec2) -> f64 {
        self.a.dot(u) - self.b
    }
}

/// Constraint rows in obstacle order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    rows: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn from_rows(rows: Vec<Constraint>) -> Self {
        Self { rows }
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn residuals(&self, u: Vec2) -> Vec<f64> {
        self.rows.iter().map(|c| c.residual(u)).collect()
    }

    /// Stacked `(A_ac, b_ac)` for the given row indices.
    pub fn select(&self, idx: &[usize]) -> Result<(MatK2, Vec<f64>)> {
        let mut rows = Vec::with_capacity(idx.len());
        let mut b = Vec::with_capacity(idx.len());
        for &i in idx {
            let c = self.rows.get(i).ok_or_else(|| {
                Error::DimensionMismatch(format!("active index {i} out of {} rows", self.len()))
            })?;
            rows.push(c.a);
            b.push(c.b);
        }
        Ok((MatK2::from_rows(rows)?, b))
    }
}

/// Active-set regime of one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseLabel {
    /// No active constraint.
    K0,
    /// Exactly one active constraint.
    K1,
    /// Two or more active constraints, all parallel to one of them.
    #[serde(rename = "KM_R1")]
    KmR1,
    /// Two or more active constraints spanning the plane.
    #[serde(rename = "KM_R2")]
    KmR2,
}

impl CaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseLabel::K0 => "K0",
            CaseLabel::K1 => "K1",
            CaseLabel::KmR1 => "KM_R1",
            CaseLabel::KmR2 => "KM_R2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "K0" => Some(CaseLabel::K0),
            "K1" => Some(CaseLabel::K1),
            "KM_R1" => Some(CaseLabel::KmR1),
            "KM_R2" => Some(CaseLabel::KmR2),
            _ => None,
        }
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub u_star: Vec2,
    /// One dual per constraint row.
    pub mu: Vec<f64>,
    /// Rows with `|a_jᵀu* − b_j| ≤ eps_active`, ascending.
    pub active: Vec<usize>,
    pub case_label: CaseLabel,
}

/// Tolerances for the enumeration oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Absolute residual threshold for reporting a row as active.
    pub eps_active: f64,
    pub rank_tol: f64,
    /// KKT acceptance tolerance, scaled by the row magnitude.
    pub kkt_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            eps_active: 1e-6,
            rank_tol: DEFAULT_RANK_TOL,
            kkt_tol: 1e-9,
        }
    }
}

/// `û = −k_p (x − x_d)`.
pub fn nominal_control(x: Vec2, params: &TaskParams) -> Vec2 {
    (x - params.goal) * -params.k_p
}

pub fn build_constraints(
    x: Vec2,
    obstacles: &[Vec2],
    cfg: &SafetyConfig,
) -> Result<ConstraintSet> {
    if !x.is_finite() {
        return Err(Error::NonFiniteState("robot position"));
    }
    let d_s2 = cfg.d_s * cfg.d_s;
    let rows = obstacles
        .iter()
        .enumerate()
        .map(|(j, &xo)| {
            if !xo.is_finite() {
                return Err(Error::NonFiniteState("obstacle position"));
            }
            let delta = x - xo;
            if delta.norm() < DEGENERATE_NORM {
                return Err(Error::CoincidentObstacle {
                    index: j,
                    x: x.to_array(),
                    obstacle: xo.to_array(),
                });
            }
            Ok(Constraint {
                a: -delta,
                b: 0.5 * cfg.gamma * (delta.norm_sq() - d_s2),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConstraintSet { rows })
}

pub fn solve_qp_oracle(cons: &ConstraintSet, u_hat: Vec2) -> Result<ControlSolution> {
    solve_qp_oracle_with(cons, u_hat, &QpOptions::default())
}

fn primal_ok(cons: &ConstraintSet, u: Vec2, tol: f64) -> bool {
    cons.rows
        .iter()
        .all(|c| c.residual(u) <= tol * row_scale(c, u))
}

fn row_scale(c: &Constraint, u: Vec2) -> f64 {
    1f64.max(c.b.abs()).max(c.a.norm() * u.norm())
}

/// Exact minimizer by active-subset enumeration.
///
/// Subsets are tried in the order `{}`, singletons, then pairs, and the first
/// one whose equality solution satisfies all KKT conditions wins. Pairs are
/// enough: in the plane any KKT multiplier vector can be reduced to at most
/// two nonzero entries.
pub fn solve_qp_oracle_with(
    cons: &ConstraintSet,
    u_hat: Vec2,
    opts: &QpOptions,
) -> Result<ControlSolution> {
    if !u_hat.is_finite() {
        return Err(Error::NonFiniteState("nominal control"));
    }
    let m = cons.len();
    let tol = opts.kkt_tol;
    let mut mu = vec![0.0; m];

    let u_star = 'search: {
        if primal_ok(cons, u_hat, tol) {
            break 'search u_hat;
        }

        for (i, c) in cons.rows.iter().enumerate() {
            let n2 = c.a.norm_sq();
            let mu_i = 2.0 * (c.a.dot(u_hat) - c.b) / n2;
            if mu_i < -tol {
                continue;
            }
            let u = u_hat - c.a * (0.5 * mu_i);
            if primal_ok(cons, u, tol) {
                mu[i] = mu_i;
                break 'search u;
            }
        }

        for i in 0..m {
            for j in (i + 1)..m {
                let (ci, cj) = (cons.rows[i], cons.rows[j]);
                let det = ci.a.cross(cj.a);
                if det.abs() <= 1e-12 * ci.a.norm() * cj.a.norm() {
                    continue;
                }
                // [a_iᵀ; a_jᵀ] u = [b_i; b_j], solved directly so that u is
                // independent of û.
                let u = Vec2::new(
                    (ci.b * cj.a.y - cj.b * ci.a.y) / det,
                    (ci.a.x * cj.b - cj.a.x * ci.b) / det,
                );
                // ½ (μ_i a_i + μ_j a_j) = û − u
                let r = (u_hat - u) * 2.0;
                let mu_i = r.cross(cj.a) / det;
                let mu_j = ci.a.cross(r) / det;
                if mu_i < -tol || mu_j < -tol {
                    continue;
                }
                if primal_ok(cons, u, tol) {
                    mu[i] = mu_i;
                    mu[j] = mu_j;
                    break 'search u;
                }
            }
        }
        return Err(Error::Infeasible);
    };

    let active: Vec<usize> = cons
        .rows
        .iter()
        .enumerate()
        .filter(|(_, c)| c.residual(u_star).abs() <= opts.eps_active)
        .map(|(j, _)| j)
        .collect();
    let case_label = classify_case(cons, &active, opts.rank_tol);
    Ok(ControlSolution {
        u_star,
        mu,
        active,
        case_label,
    })
}

pub fn classify_case(cons: &ConstraintSet, active: &[usize], rank_tol: f64) -> CaseLabel {
    match active.len() {
        0 => CaseLabel::K0,
        1 => CaseLabel::K1,
        _ => {
            let Ok((a_ac, _)) = cons.select(active) else {
                return CaseLabel::KmR2;
            };
            let svd = svd_k2(&a_ac);
            if svd.sigma[0] == 0.0 || svd.sigma[1] / svd.sigma[0] < rank_tol {
                CaseLabel::KmR1
            } else {
                CaseLabel::KmR2
            }
        }
    }
}

/// Closed-form structure of the optimal control for one active-set case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Branch {
    /// `u* = û`.
    Free,
    /// `u* = offset + V₂V₂ᵀû` with `V₁ = a_{i1}/‖a_{i1}‖`, `V₂ = R_{π/2} V₁`.
    Line { v1: Vec2, v2: Vec2, offset: Vec2 },
    /// `u* = A_ac† b_ac`, independent of `û`.
    Pinned { u: Vec2 },
}

impl Branch {
    pub fn control(&self, u_hat: Vec2) -> Vec2 {
        match *self {
            Branch::Free => u_hat,
            Branch::Line { v2, offset, .. } => offset + v2 * v2.dot(u_hat),
            Branch::Pinned { u } => u,
        }
    }
}

fn check_arity(case: CaseLabel, active: &[usize]) -> Result<()> {
    let ok = match case {
        CaseLabel::K0 => active.is_empty(),
        CaseLabel::K1 => active.len() == 1,
        CaseLabel::KmR1 | CaseLabel::KmR2 => active.len() >= 2,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "case {case} with {} active rows",
            active.len()
        )))
    }
}

/// Builds the branch of the given case from the active rows.
///
/// For `KM_R1` the lowest active index is the representative row `i₁` and
/// `λ_j = a_jᵀa_{i1}/‖a_{i1}‖²`, giving `U₁ = (1, λ₂, …)/s`, `Σ_r = s‖a_{i1}‖`
/// with `s = √(1 + Σλ_j²)`.
pub fn active_branch(
    case: CaseLabel,
    cons: &ConstraintSet,
    active: &[usize],
    rank_tol: f64,
) -> Result<Branch> {
    check_arity(case, active)?;
    match case {
        CaseLabel::K0 => Ok(Branch::Free),
        CaseLabel::K1 | CaseLabel::KmR1 => {
            let (a_ac, b_ac) = cons.select(active)?;
            let lead = a_ac.rows()[0];
            let sigma_m = lead.norm();
            if sigma_m < DEGENERATE_NORM {
                return Err(Error::DegenerateConstraint { index: active[0] });
            }
            let v1 = lead / sigma_m;
            let v2 = rot90(v1);
            let offset = if case == CaseLabel::K1 {
                v1 * (b_ac[0] / sigma_m)
            } else {
                let lambdas: Vec<f64> = a_ac.rows()[1..]
                    .iter()
                    .map(|a| a.dot(lead) / (sigma_m * sigma_m))
                    .collect();
                let s = (1.0 + lambdas.iter().map(|l| l * l).sum::<f64>()).sqrt();
                let sigma_r = s * sigma_m;
                let u1_b = (b_ac[0]
                    + lambdas
                        .iter()
                        .zip(&b_ac[1..])
                        .map(|(l, b)| l * b)
                        .sum::<f64>())
                    / s;
                v1 * (u1_b / sigma_r)
            };
            Ok(Branch::Line { v1, v2, offset })
        }
        CaseLabel::KmR2 => {
            let (a_ac, b_ac) = cons.select(active)?;
            if let Some(pos) = a_ac.rows().iter().position(|a| a.norm() < DEGENERATE_NORM) {
                return Err(Error::DegenerateConstraint { index: active[pos] });
            }
            Ok(Branch::Pinned {
                u: pinv_k2(&a_ac, rank_tol).apply(&b_ac),
            })
        }
    }
}

/// Optimal control from the branch formula of `case`.
pub fn solve_closed_form(
    case: CaseLabel,
    cons: &ConstraintSet,
    active: &[usize],
    u_hat: Vec2,
) -> Result<Vec2> {
    Ok(active_branch(case, cons, active, DEFAULT_RANK_TOL)?.control(u_hat))
}

/// Geometric relation between two active rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lemma4Relation {
    /// Same obstacle position (`λ = +1`).
    Coincident,
    /// Robot at the midpoint of two touching obstacles (`λ = −1`).
    Opposite,
    NotDependent,
}

const LEMMA_TOL: f64 = 1e-9;

/// Checks the only admissible dependencies between two simultaneously active
/// rows: `a_j = a_1` with equal `b`, or `a_j = −a_1` with both `b` zero.
pub fn lemma4_check(
    a1: Vec2,
    aj: Vec2,
    b1: f64,
    bj: f64,
    cfg: &SafetyConfig,
) -> Result<Lemma4Relation> {
    let (n1, nj) = (a1.norm(), aj.norm());
    if n1 < DEGENERATE_NORM {
        return Err(Error::DegenerateConstraint { index: 0 });
    }
    if nj < DEGENERATE_NORM {
        return Err(Error::DegenerateConstraint { index: 1 });
    }
    if a1.cross(aj).abs() > LEMMA_TOL * n1 * nj {
        return Ok(Lemma4Relation::NotDependent);
    }
    let lambda = aj.dot(a1) / (n1 * n1);
    let b_tol = LEMMA_TOL * cfg.gamma.max(1.0) * cfg.d_s.max(1.0).powi(2);
    if (lambda - 1.0).abs() <= LEMMA_TOL && (b1 - bj).abs() <= b_tol {
        return Ok(Lemma4Relation::Coincident);
    }
    let touching = (n1 - cfg.d_s).abs() <= LEMMA_TOL * cfg.d_s.max(1.0);
    if (lambda + 1.0).abs() <= LEMMA_TOL && b1.abs() <= b_tol && bj.abs() <= b_tol && touching {
        return Ok(Lemma4Relation::Opposite);
    }
    Err(Error::LemmaViolation { lambda })
}

//! Unscented Kalman filter baseline.
//!
//! `θ` is a random walk and the measurement is the robot's velocity, modelled
//! by re-solving the full safety QP at each sigma point. No `(G, f)` form is
//! used, so this estimator is independent of the closed-form analysis.

use nalgebra::{DMatrix, DVector};

use crate::controller::{build_constraints, solve_qp_oracle, SafetyConfig};
use crate::error::{Error, Result};
use crate::linalg::{min_eig_sym, SymP, Vec2};
use crate::regressor::TargetParam;

/// Floor on the smallest covariance eigenvalue after each step.
pub const COV_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfConfig {
    /// Initial covariance `p0 · I`.
    pub p0: f64,
    /// Random-walk intensity; the prediction adds `q_proc · dt · I`.
    pub q_proc: f64,
    /// Velocity measurement variance per axis.
    pub r_meas: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub dt: f64,
}

impl Default for UkfConfig {
    fn default() -> Self {
        Self {
            p0: 1.0,
            q_proc: 1e-6,
            r_meas: 1e-4,
            alpha: 0.5,
            beta: 2.0,
            kappa: 0.0,
            dt: 1e-3,
        }
    }
}

impl UkfConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("p0", self.p0), ("r_meas", self.r_meas), ("dt", self.dt)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("ukf.{name} must be > 0, got {v}")));
            }
        }
        if !(self.q_proc.is_finite() && self.q_proc >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ukf.q_proc must be >= 0, got {}",
                self.q_proc
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "ukf.alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || !self.kappa.is_finite() {
            return Err(Error::InvalidConfig("ukf.beta and ukf.kappa must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UkfState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub t: f64,
    /// Updates whose sigma points fell into more than one active-set case.
    pub mixed_case_updates: usize,
}

/// Everything the measurement model needs at one instant.
#[derive(Debug, Clone, Copy)]
pub struct UkfSnapshot<'a> {
    pub x: Vec2,
    pub obstacles: &'a [Vec2],
    pub safety: SafetyConfig,
    pub target: TargetParam,
}

pub fn ukf_init(theta0: DVector<f64>, cfg: &UkfConfig) -> Result<UkfState> {
    cfg.validate()?;
    let p = theta0.len();
    if !(1..=2).contains(&p) {
        return Err(Error::DimensionMismatch(format!(
            "parameter dimension {p} not in {{1, 2}}"
        )));
    }
    Ok(UkfState {
        mean: theta0,
        cov: DMatrix::identity(p, p) * cfg.p0,
        t: 0.0,
        mixed_case_updates: 0,
    })
}

struct SigmaWeights {
    spread: f64,
    wm0: f64,
    wc0: f64,
    wi: f64,
}

impl SigmaWeights {
    fn new(n: usize, cfg: &UkfConfig) -> Self {
        let n = n as f64;
        let spread = cfg.alpha * cfg.alpha * (n + cfg.kappa);
        let lambda = spread - n;
        Self {
            spread,
            wm0: lambda / spread,
            wc0: lambda / spread + 1.0 - cfg.alpha * cfg.alpha + cfg.beta,
            wi: 1.0 / (2.0 * spread),
        }
    }

    fn wm(&self, i: usize) -> f64 {
        if i == 0 {
            self.wm0
        } else {
            self.wi
        }
    }

    fn wc(&self, i: usize) -> f64 {
        if i == 0 {
            self.wc0
        } else {
            self.wi
        }
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes and lifts the spectrum so that `λ_min > COV_FLOOR`.
fn regularize(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(cov);
    let lmin = min_eig_sym(&SymP::from_dmatrix(&sym)?);
    if lmin > COV_FLOOR {
        return Ok(sym);
    }
    let n = sym.nrows();
    Ok(sym + DMatrix::identity(n, n) * (2.0 * COV_FLOOR - lmin))
}

fn sigma_points(mean: &DVector<f64>, cov: &DMatrix<f64>, spread: f64) -> Result<Vec<DVector<f64>>> {
    let chol = (cov * spread)
        .cholesky()
        .ok_or(Error::NonFiniteState("UKF covariance is not positive definite"))?;
    let l = chol.l();
    let n = mean.len();
    let mut pts = Vec::with_capacity(2 * n + 1);
    pts.push(mean.clone());
    for i in 0..n {
        pts.push(mean + l.column(i));
    }
    for i in 0..n {
        pts.push(mean - l.column(i));
    }
    Ok(pts)
}

/// Random-walk predict followed by an unscented update against `u_meas`.
pub fn ukf_step(
    s: &UkfState,
    snapshot: &UkfSnapshot<'_>,
    u_meas: Vec2,
    cfg: &UkfConfig,
) -> Result<UkfState> {
    let n = s.mean.len();
    if snapshot.target.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "target has dimension {}, filter has {n}",
            snapshot.target.dim()
        )));
    }
    let cons = build_constraints(snapshot.x, snapshot.obstacles, &snapshot.safety)?;
    let weights = SigmaWeights::new(n, cfg);

    let cov_pred = regularize(&(&s.cov + DMatrix::identity(n, n) * (cfg.q_proc * cfg.dt)))?;
    let pts = sigma_points(&s.mean, &cov_pred, weights.spread)?;

    let mut ys = Vec::with_capacity(pts.len());
    let mut cases = Vec::with_capacity(pts.len());
    for theta in &pts {
        let u_hat = snapshot.target.nominal(snapshot.x, theta);
        let sol = solve_qp_oracle(&cons, u_hat)?;
        ys.push(sol.u_star);
        cases.push(sol.case_label);
    }

    // Mean taken relative to the centre point so that identical outputs give
    // exactly zero deviations.
    let y0 = ys[0];
    let y_mean = ys
        .iter()
        .enumerate()
        .skip(1)
        .fold(y0, |acc, (i, y)| acc + (*y - y0) * weights.wm(i));

    let mut p_yy = DMatrix::identity(2, 2) * cfg.r_meas;
    let mut p_xy = DMatrix::zeros(n, 2);
    for (i, (theta, y)) in pts.iter().zip(&ys).enumerate() {
        let dy = (*y - y_mean).to_dvector();
        let dx = theta - &s.mean;
        p_yy += &dy * dy.transpose() * weights.wc(i);
        p_xy += dx * dy.transpose() * weights.wc(i);
    }

    let p_yy_inv = p_yy
        .clone()
        .try_inverse()
        .ok_or(Error::NonFiniteState("UKF innovation covariance"))?;
    let k = &p_xy * p_yy_inv;
    let innovation = (u_meas - y_mean).to_dvector();
    let mean = &s.mean + &k * innovation;
    let cov = regularize(&(cov_pred - &k * p_yy * k.transpose()))?;

    if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState("UKF state"));
    }
    let mixed = cases.iter().any(|c| *c != cases[0]);
    Ok(UkfState {
        mean,
        cov,
        t: s.t + cfg.dt,
        mixed_case_updates: s.mixed_case_updates + usize::from(mixed),
    })
}

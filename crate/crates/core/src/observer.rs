//! Adaptive observer for `ẋ = G(x)θ + f(x)`.
//!
//! Continuous-time laws:
//!
//! ```text
//! x̂' = Gθ⁰ + f + k_w(x − x̂)      W' = −k_w W + G       η' = −k_w η
//! Q'  = WᵀW                       C' = Wᵀ(Wθ⁰ + x − x̂ − η)
//! θ̂' = Γ(C − Qθ̂)
//! ```
//!
//! On the shared simulation grid `G`, `f` and the measured velocity are held
//! constant over each step. The three linear filters (`x̂`, `W`, `η`) are
//! integrated exactly under that hold, with the position following the
//! piecewise-linear track `x + s·u`. `Q` and `C` are left-Riemann sums and
//! `θ̂` takes an explicit Euler step. With this split `x − x̂ − η = W(θ − θ⁰)`
//! holds on the grid to rounding, so `C = Qθ` exactly as in continuous time.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{min_eig_sym, SymP, Vec2};
use crate::regressor::Regressor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoConfig {
    /// Predictor and filter gain (1/s).
    pub k_w: f64,
    /// Update-law gain; `Γ = gamma_gain · I`.
    pub gamma_gain: f64,
    /// `λ_min(Q)` above which `t_c` latches.
    pub ie_threshold: f64,
    pub dt: f64,
}

impl Default for AoConfig {
    fn default() -> Self {
        Self {
            k_w: 5.0,
            gamma_gain: 10.0,
            ie_threshold: 1e-4,
            dt: 1e-3,
        }
    }
}

impl AoConfig {
    pub fn new(k_w: f64, gamma_gain: f64, ie_threshold: f64, dt: f64) -> Result<Self> {
        let cfg = Self {
            k_w,
            gamma_gain,
            ie_threshold,
            dt,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k_w", self.k_w),
            ("gamma", self.gamma_gain),
            ("ie_threshold", self.ie_threshold),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("ao.{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    fn gamma(&self, p: usize) -> Result<SymP> {
        SymP::scaled_identity(p, self.gamma_gain)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub x_hat: Vec2,
    /// `2×p`.
    pub w: DMatrix<f64>,
    pub eta: Vec2,
    pub q: SymP,
    pub c: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub theta0: DVector<f64>,
    pub t: f64,
    pub t_c: Option<f64>,
}

impl ObserverState {
    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn lambda_min_q(&self) -> f64 {
        min_eig_sym(&self.q)
    }

    fn is_finite(&self) -> bool {
        self.x_hat.is_finite()
            && self.eta.is_finite()
            && self.q.is_finite()
            && self.w.iter().all(|v| v.is_finite())
            && self.c.iter().all(|v| v.is_finite())
            && self.theta_hat.iter().all(|v| v.is_finite())
    }
}

pub fn ao_init(theta0: DVector<f64>, x0: Vec2, cfg: &AoConfig) -> Result<ObserverState> {
    ao_init_with_predictor(theta0, x0, x0, cfg)
}

/// Like [`ao_init`] but with `x̂(0)` chosen freely, so that
/// `η(0) = x(0) − x̂(0)` is nonzero. Used to exercise the `η` decay.
pub fn ao_init_with_predictor(
    theta0: DVector<f64>,
    x0: Vec2,
    x_hat0: Vec2,
    cfg: &AoConfig,
) -> Result<ObserverState> {
    cfg.validate()?;
    let p = theta0.len();
    if !(1..=2).contains(&p) {
        return Err(Error::DimensionMismatch(format!(
            "parameter dimension {p} not in {{1, 2}}"
        )));
    }
    if !theta0.iter().all(|v| v.is_finite()) || !x0.is_finite() || !x_hat0.is_finite() {
        return Err(Error::NonFiniteState("observer initial condition"));
    }
    Ok(ObserverState {
        x_hat: x_hat0,
        w: DMatrix::zeros(2, p),
        eta: x0 - x_hat0,
        q: SymP::zeros(p)?,
        c: DVector::zeros(p),
        theta_hat: theta0.clone(),
        theta0,
        t: 0.0,
        t_c: None,
    })
}

/// Advances the observer by one `dt` from the measurement `(x, u)` at `s.t`.
pub fn ao_step(
    s: &ObserverState,
    x_meas: Vec2,
    u_meas: Vec2,
    reg: &Regressor,
    cfg: &AoConfig,
) -> Result<ObserverState> {
    let p = s.dim();
    if reg.g.nrows() != 2 || reg.g.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "regressor is {}×{}, observer expects 2×{p}",
            reg.g.nrows(),
            reg.g.ncols()
        )));
    }
    let dt = cfg.dt;
    let decay = (-cfg.k_w * dt).exp();
    // ∫₀^dt e^{−k_w s} ds
    let gain = -(-cfg.k_w * dt).exp_m1() / cfg.k_w;

    let err = x_meas - s.x_hat;
    let w_theta0 = Vec2::from_column(&(&s.w * &s.theta0));

    let q = s.q.add_scaled(&SymP::gram_of(&s.w)?, dt)?;
    let c_rate = s.w.transpose() * (w_theta0 + err - s.eta).to_dvector();
    let c = &s.c + c_rate * dt;
    let gamma = cfg.gamma(p)?;
    let theta_hat =
        &s.theta_hat + gamma.mul_vec(&(&s.c - s.q.mul_vec(&s.theta_hat))) * dt;

    let predicted_rate = reg.predict(&s.theta0);
    let err_next = err * decay + (u_meas - predicted_rate) * gain;
    let x_hat = x_meas + u_meas * dt - err_next;
    let w = &s.w * decay + &reg.g * gain;
    let eta = s.eta * decay;

    let t = s.t + dt;
    let t_c = s
        .t_c
        .or_else(|| (min_eig_sym(&q) > cfg.ie_threshold).then_some(t));

    let next = ObserverState {
        x_hat,
        w,
        eta,
        q,
        c,
        theta_hat,
        theta0: s.theta0.clone(),
        t,
        t_c,
    };
    if !next.is_finite() {
        return Err(Error::NonFiniteState("observer state"));
    }
    Ok(next)
}

/// Time at which `Q` first became positive definite beyond the threshold.
pub fn ie_reached(s: &ObserverState, cfg: &AoConfig) -> Option<f64> {
    s.t_c.or_else(|| (min_eig_sym(&s.q) > cfg.ie_threshold).then_some(s.t))
}

//! Multirobot task inference.
//!
//! Robots drive single-integrator dynamics toward goals through a CBF-QP
//! safety filter. An observer watching their positions and velocities tries
//! to recover each robot's goal (or gain) with an adaptive observer and a
//! UKF. The closed-form active-set analysis in [`controller`] and
//! [`regressor`] rewrites the implicit QP control as `u* = G(x)θ + f(x)`,
//! which is what makes excitation diagnostics possible.

pub mod controller;
pub mod error;
pub mod linalg;
pub mod observer;
pub mod regressor;
pub mod simkit;
pub mod ukf;

pub use error::{Error, Result};
pub use linalg::Vec2;

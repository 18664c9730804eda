//! Randomized oracle-equivalence suite.
//!
//! Draws safe instances (every `b_j ≥ 0` up to rounding), solves them with the
//! enumeration oracle, checks the KKT conditions and compares the closed-form
//! branch control wherever the active rows fit one of the analysed cases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{
    build_constraints, lemma4_check, solve_closed_form, solve_qp_oracle, CaseLabel, ConstraintSet,
    ControlSolution, SafetyConfig,
};
use crate::error::Result;
use crate::linalg::Vec2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelftestConfig {
    pub instances: usize,
    pub max_obstacles: usize,
    pub seed: u64,
    pub kkt_tol: f64,
    pub closed_form_tol: f64,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            instances: 10_000,
            max_obstacles: 6,
            seed: 0x5eed,
            kkt_tol: 1e-9,
            closed_form_tol: 1e-8,
        }
    }
}

/// One randomly drawn QP.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub x: Vec2,
    pub obstacles: Vec<Vec2>,
    pub safety: SafetyConfig,
    pub u_hat: Vec2,
}

impl Instance {
    pub fn constraints(&self) -> Result<ConstraintSet> {
        build_constraints(self.x, &self.obstacles, &self.safety)
    }
}

fn unit(rng: &mut impl Rng) -> Vec2 {
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    Vec2::new(a.cos(), a.sin())
}

/// Draws an instance. A share of draws is engineered to hit touching
/// obstacles, duplicated obstacles, and a robot midway between two touching
/// obstacles.
pub fn random_instance(rng: &mut impl Rng, max_obstacles: usize) -> Instance {
    let d_s = rng.random_range(0.2..1.0);
    let gamma = rng.random_range(0.2..5.0);
    let safety = SafetyConfig { d_s, gamma };
    let x = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    let m = rng.random_range(0..=max_obstacles);
    let mut obstacles = Vec::with_capacity(m);
    while obstacles.len() < m {
        let kind = rng.random_range(0..10);
        let remaining = m - obstacles.len();
        match kind {
            // touching
            0..=2 => obstacles.push(x + unit(rng) * d_s),
            // duplicate of an existing one
            3 if !obstacles.is_empty() => {
                let k = rng.random_range(0..obstacles.len());
                obstacles.push(obstacles[k]);
            }
            // robot at the midpoint of two touching obstacles
            4 if remaining >= 2 => {
                let n = unit(rng) * d_s;
                obstacles.push(x + n);
                obstacles.push(x - n);
            }
            _ => obstacles.push(x + unit(rng) * (d_s * rng.random_range(1.0..2.5))),
        }
    }
    // nominal control aimed mostly at the obstacles so that rows activate
    let speed = rng.random_range(0.0..4.0);
    let u_hat = match obstacles.first() {
        Some(&o) if rng.random_bool(0.7) => ((o - x) + unit(rng) * 0.4 * d_s) * speed,
        _ => unit(rng) * speed,
    };
    Instance {
        x,
        obstacles,
        safety,
        u_hat,
    }
}

/// Largest scaled violation over stationarity, primal feasibility, dual
/// feasibility and complementary slackness.
pub fn kkt_violation(cons: &ConstraintSet, u_hat: Vec2, sol: &ControlSolution) -> f64 {
    let u = sol.u_star;
    let mut grad = u - u_hat;
    let mut worst: f64 = 0.0;
    for (c, &mu) in cons.rows().iter().zip(&sol.mu) {
        grad += c.a * (0.5 * mu);
        let scale = 1f64.max(c.b.abs()).max(c.a.norm() * u.norm());
        let r = c.residual(u);
        worst = worst.max(r / scale);
        worst = worst.max(-mu);
        worst = worst.max((mu * r).abs() / scale);
    }
    let scale = 1f64.max(u_hat.norm());
    worst.max(grad.norm() / scale)
}

/// Whether the oracle's active rows have the geometry of an analysed case.
/// Parallel active rows must be coincident or opposite-and-touching.
pub fn matches_case(cons: &ConstraintSet, sol: &ControlSolution, safety: &SafetyConfig) -> bool {
    match sol.case_label {
        CaseLabel::K0 | CaseLabel::K1 | CaseLabel::KmR2 => true,
        CaseLabel::KmR1 => {
            let rows = cons.rows();
            let lead = rows[sol.active[0]];
            sol.active[1..]
                .iter()
                .all(|&j| lemma4_check(lead.a, rows[j].a, lead.b, rows[j].b, safety).is_ok())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelftestReport {
    pub instances: usize,
    pub infeasible: usize,
    pub kkt_failures: usize,
    pub max_kkt_violation: f64,
    pub closed_form_checked: usize,
    pub closed_form_failures: usize,
    pub max_closed_form_gap: f64,
    /// Counts for K0, K1, KM_R1, KM_R2.
    pub by_case: [usize; 4],
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.infeasible == 0 && self.kkt_failures == 0 && self.closed_form_failures == 0
    }
}

fn case_index(c: CaseLabel) -> usize {
    match c {
        CaseLabel::K0 => 0,
        CaseLabel::K1 => 1,
        CaseLabel::KmR1 => 2,
        CaseLabel::KmR2 => 3,
    }
}

pub fn run_selftest(cfg: &SelftestConfig) -> SelftestReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rep = SelftestReport::default();
    for _ in 0..cfg.instances {
        let inst = random_instance(&mut rng, cfg.max_obstacles);
        rep.instances += 1;
        let Ok(cons) = inst.constraints() else {
            rep.infeasible += 1;
            continue;
        };
        let sol = match solve_qp_oracle(&cons, inst.u_hat) {
            Ok(s) => s,
            Err(_) => {
                rep.infeasible += 1;
                continue;
            }
        };
        rep.by_case[case_index(sol.case_label)] += 1;
        let v = kkt_violation(&cons, inst.u_hat, &sol);
        rep.max_kkt_violation = rep.max_kkt_violation.max(v);
        if v > cfg.kkt_tol {
            rep.kkt_failures += 1;
        }
        if matches_case(&cons, &sol, &inst.safety) {
            rep.closed_form_checked += 1;
            let gap = solve_closed_form(sol.case_label, &cons, &sol.active, inst.u_hat)
                .map(|u| (u - sol.u_star).norm())
                .unwrap_or(f64::INFINITY);
            rep.max_closed_form_gap = rep.max_closed_form_gap.max(gap);
            if gap > cfg.closed_form_tol {
                rep.closed_form_failures += 1;
            }
        }
    }
    rep
}

pub fn render(rep: &SelftestReport) -> String {
    format!(
        "instances {}  infeasible {}\n\
         kkt failures {}  max violation {:.3e}\n\
         closed form checked {}  failures {}  max gap {:.3e}\n\
         cases K0 {}  K1 {}  KM_R1 {}  KM_R2 {}\n\
         {}\n",
        rep.instances,
        rep.infeasible,
        rep.kkt_failures,
        rep.max_kkt_violation,
        rep.closed_form_checked,
        rep.closed_form_failures,
        rep.max_closed_form_gap,
        rep.by_case[0],
        rep.by_case[1],
        rep.by_case[2],
        rep.by_case[3],
        if rep.passed() { "ok" } else { "FAILED" }
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_covers_every_case() {
        let rep = run_selftest(&SelftestConfig {
            instances: 2000,
            ..SelftestConfig::default()
        });
        assert!(rep.passed(), "{}", render(&rep));
        assert!(rep.by_case.iter().all(|&n| n > 0), "{:?}", rep.by_case);
    }
}

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use taskinfer::controller::{build_constraints, solve_qp_oracle, SafetyConfig, TaskParams};
use taskinfer::linalg::{
    max_eig_sym, min_eig_sym, pinv_k2, rot90, svd_k2, MatK2, SymP, Vec2, DEFAULT_RANK_TOL,
};
use taskinfer::observer::{ao_init, ao_step, AoConfig};
use taskinfer::regressor::{build_regressor, excitation_gram, GSample, Regressor, TargetKind};
use taskinfer::controller::CaseLabel;
use taskinfer::simkit::selftest::matches_case;

fn vec2(r: f64) -> impl Strategy<Value = Vec2> {
    (-r..r, -r..r).prop_map(|(x, y)| Vec2::new(x, y))
}

fn matk2() -> impl Strategy<Value = MatK2> {
    prop::collection::vec(vec2(3.0), 1..=6).prop_map(|rows| MatK2::from_rows(rows).unwrap())
}

/// Safe instance: every obstacle at distance ≥ d_s from the robot.
fn instance() -> impl Strategy<Value = (Vec2, Vec<Vec2>, SafetyConfig, Vec2)> {
    (
        0.2f64..1.0,
        0.2f64..5.0,
        vec2(3.0),
        prop::collection::vec((0.0f64..std::f64::consts::TAU, 1.0f64..2.5), 0..=6),
        vec2(6.0),
    )
        .prop_map(|(d_s, gamma, x, polar, u_hat)| {
            let obstacles = polar
                .into_iter()
                .map(|(a, r)| x + Vec2::new(a.cos(), a.sin()) * (r * d_s))
                .collect();
            (x, obstacles, SafetyConfig { d_s, gamma }, u_hat)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rot90_is_a_quarter_turn(v in vec2(10.0)) {
        let r = rot90(v);
        prop_assert_eq!(r.dot(v), 0.0);
        prop_assert_eq!(r.norm_sq(), v.norm_sq());
        prop_assert_eq!(rot90(r), -v);
        prop_assert!(v.cross(r) >= 0.0);
    }

    #[test]
    fn svd_reconstructs_and_orders(a in matk2()) {
        let svd = svd_k2(&a);
        prop_assert!(svd.sigma[0] >= svd.sigma[1] && svd.sigma[1] >= 0.0);
        prop_assert!((svd.v1.norm() - 1.0).abs() < 1e-12);
        prop_assert!(svd.v1.dot(svd.v2).abs() < 1e-12);
        let scale = 1f64.max(a.frobenius());
        for (r, orig) in svd.reconstruct().iter().zip(a.rows()) {
            prop_assert!((*r - *orig).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn pinv_satisfies_moore_penrose(a in matk2()) {
        // skip numerically rank-ambiguous draws
        let svd = svd_k2(&a);
        let ratio = svd.sigma[1] / svd.sigma[0].max(1e-300);
        prop_assume!(svd.sigma[0] > 1e-6 && !(1e-12..=1e-4).contains(&ratio));
        let am = a.to_dmatrix();
        let p = pinv_k2(&a, DEFAULT_RANK_TOL).to_dmatrix();
        let tol = 1e-8 * (1.0 + am.amax() * p.amax()).powi(2);
        prop_assert!((&am * &p * &am - &am).amax() <= tol);
        prop_assert!((&p * &am * &p - &p).amax() <= tol * (1.0 + p.amax()));
        let ap = &am * &p;
        let pa = &p * &am;
        prop_assert!((&ap - ap.transpose()).amax() <= tol);
        prop_assert!((&pa - pa.transpose()).amax() <= tol);
    }

    #[test]
    fn symmetric_eigenvalues_match_nalgebra(a11 in -5.0f64..5.0, a12 in -5.0f64..5.0, a22 in -5.0f64..5.0) {
        let q = SymP::Two { a11, a12, a22 };
        let eig = q.to_dmatrix().symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        prop_assert!((min_eig_sym(&q) - lo).abs() < 1e-12 * (1.0 + hi.abs()));
        prop_assert!((max_eig_sym(&q) - hi).abs() < 1e-12 * (1.0 + hi.abs()));
    }

    #[test]
    fn oracle_is_feasible_and_optimal_against_sampled_points(
        (x, obs, safety, u_hat) in instance(),
        probes in prop::collection::vec(vec2(8.0), 32),
    ) {
        let cons = build_constraints(x, &obs, &safety).unwrap();
        let sol = solve_qp_oracle(&cons, u_hat).unwrap();
        let tol = |b: f64| 1e-9 * 1f64.max(b.abs()).max(sol.u_star.norm() * 10.0);
        for c in cons.rows() {
            prop_assert!(c.residual(sol.u_star) <= tol(c.b));
        }
        prop_assert!(sol.mu.iter().all(|&m| m >= -1e-9));
        let best = (sol.u_star - u_hat).norm_sq();
        for p in probes {
            if cons.rows().iter().all(|c| c.residual(p) <= 0.0) {
                prop_assert!(best <= (p - u_hat).norm_sq() + 1e-9);
            }
        }
    }

    #[test]
    fn regressor_reproduces_the_control(
        (x, obs, safety, _) in instance(),
        goal in vec2(6.0),
        k_p in 0.2f64..4.0,
    ) {
        let cons = build_constraints(x, &obs, &safety).unwrap();
        let params = TaskParams::new(goal, k_p).unwrap();
        let u_hat = (x - goal) * -k_p;
        let sol = solve_qp_oracle(&cons, u_hat).unwrap();
        prop_assume!(matches_case(&cons, &sol, &safety));
        for kind in [TargetKind::Goal, TargetKind::Gain] {
            let target = kind.for_robot(&params);
            let reg = build_regressor(x, &cons, &sol.active, &target, DEFAULT_RANK_TOL).unwrap();
            prop_assert_eq!(reg.case_label, sol.case_label);
            let u = reg.predict(&target.true_theta(&params));
            prop_assert!((u - sol.u_star).norm() <= 1e-8 * (1.0 + u_hat.norm()));
        }
    }

    #[test]
    fn observer_q_is_psd_and_grows(
        gs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 1..40),
        theta in vec2(3.0),
    ) {
        let cfg = AoConfig { dt: 0.01, ..AoConfig::default() };
        let mut s = ao_init(DVector::zeros(2), Vec2::ZERO, &cfg).unwrap();
        let mut x = Vec2::ZERO;
        let mut prev = 0.0;
        for g in gs {
            for _ in 0..5 {
                let reg = Regressor {
                    g: DMatrix::from_row_slice(2, 2, &g),
                    f: Vec2::ZERO,
                    case_label: CaseLabel::K0,
                    v1: None,
                };
                let u = reg.predict(&theta.to_dvector());
                s = ao_step(&s, x, u, &reg, &cfg).unwrap();
                x += u * cfg.dt;
                let lq = s.lambda_min_q();
                prop_assert!(lq >= -1e-12);
                prop_assert!(lq >= prev - 1e-12);
                prev = lq;
                // C stays equal to Qθ along exact data
                let qtheta = s.q.mul_vec(&theta.to_dvector());
                prop_assert!((&s.c - qtheta).amax() <= 1e-9 * (1.0 + s.c.amax()));
            }
        }
    }

    #[test]
    fn excitation_gram_grows_with_the_window(
        gs in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 2..30),
    ) {
        let samples: Vec<GSample> = gs
            .iter()
            .enumerate()
            .map(|(n, g)| GSample {
                t: n as f64 * 0.1,
                g: DMatrix::from_column_slice(2, 1, g),
                case_label: CaseLabel::K0,
                v1: None,
            })
            .collect();
        let mut prev = 0.0;
        for k in 1..=samples.len() {
            let rep = excitation_gram(&samples[..k], 0.1).unwrap();
            prop_assert!(rep.lambda_min >= prev - 1e-12);
            prev = rep.lambda_min;
        }
    }
}

mod common;

use mpc_reuse_core::qp::{kkt_residuals, solve_qp, QpError};
use mpc_reuse_core::regional::polytope_from_active_set;
use mpc_reuse_core::{ActiveSet, CondensedQp};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::RngExt;

use common::*;

/// Accelerated projected gradient on the dual with adaptive restart.
/// Returns the primal minimizer `-H^{-1}(F'x + G'λ)`.
fn dual_gradient_oracle(qp: &CondensedQp, x: &DVector<f64>) -> DVector<f64> {
    let m: &DMatrix<f64> = &qp.ghg;
    let d = &qp.g * (&qp.h_inv_ft * x) + qp.rhs(x);
    let lip = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let step = 1.0 / lip;
    let q = m.nrows();
    let mut lam = DVector::<f64>::zeros(q);
    let mut y = lam.clone();
    let mut t: f64 = 1.0;
    let primal = |lam: &DVector<f64>| qp.unconstrained_minimizer(x) - &qp.h_inv_gt * lam;
    for _ in 0..2_000_000 {
        let grad = m * &y + &d;
        let next = (&y - grad * step).map(|v| v.max(0.0));
        let moved = (&next - &lam).amax();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        if (&next - &lam).dot(&(&next - &y)) > 0.0 {
            y = next.clone();
            t = 1.0;
        } else {
            y = &next + (&next - &lam) * ((t - 1.0) / t_next);
            t = t_next;
        }
        lam = next;
        if moved < 1e-13 {
            break;
        }
    }
    primal(&lam)
}

#[test]
fn origin_is_unconstrained() {
    let p = example1();
    let sol = solve_qp(&p.qp, &DVector::zeros(2)).unwrap();
    assert!(sol.u.amax() < 1e-14);
    assert!(sol.active.is_empty());
}

#[test]
fn deep_saturation_hits_the_upper_bound() {
    let p = example1();
    let region = polytope_from_active_set(&p.qp, &ActiveSet::from_one_based(&[1])).unwrap();
    let (x, radius) = region.chebyshev_center(10.0).unwrap();
    assert!(radius > 0.05);
    let sol = solve_qp(&p.qp, &x).unwrap();
    assert!((sol.u[0] - 2.0).abs() < 1e-9);
    assert!(sol.active.contains(0));
}

#[test]
fn infeasible_state_is_reported() {
    let p = example1();
    let r = solve_qp(&p.qp, &DVector::from_row_slice(&[2.9, 2.9]));
    assert_eq!(r.err(), Some(QpError::Infeasible));
}

#[test]
fn kkt_residuals_are_small() {
    for (p, seed) in [(example1(), 61), (pendulum(), 62)] {
        for x in feasible_states(p, 300, seed) {
            let sol = solve_qp(&p.qp, &x).unwrap();
            let (stat, primal, compl) = kkt_residuals(&p.qp, &x, &sol);
            assert!(stat <= 1e-7, "stationarity {stat:e} at {x}");
            assert!(primal <= 1e-8, "primal {primal:e} at {x}");
            assert!(compl <= 1e-7, "complementarity {compl:e} at {x}");
            assert!(sol.multipliers.iter().all(|&l| l >= -1e-10));
            for i in 0..p.qp.dims.q {
                if sol.multipliers[i] > 0.0 {
                    assert!(sol.active.contains(i), "multiplier on inactive row {i}");
                }
            }
        }
    }
}

#[test]
fn matches_the_dual_gradient_oracle() {
    let p = example1();
    let mut worst: f64 = 0.0;
    for x in feasible_states(p, 500, 71) {
        let sol = solve_qp(&p.qp, &x).unwrap();
        let reference = dual_gradient_oracle(&p.qp, &x);
        worst = worst.max((&sol.u - reference).amax());
    }
    assert!(worst <= 1e-6, "worst deviation {worst:e}");
}

#[test]
fn optimum_beats_feasible_perturbations() {
    let p = example1();
    let mut rng = rng(81);
    for x in feasible_states(p, 50, 82) {
        let sol = solve_qp(&p.qp, &x).unwrap();
        let best = p.qp.eval_cost(&x, &sol.u);
        let b = p.qp.rhs(&x);
        let mut tried = 0;
        while tried < 100 {
            let delta = DVector::from_fn(sol.u.len(), |_, _| rng.random_range(-0.1..0.1));
            let u = &sol.u + delta;
            if (&p.qp.g * &u - &b).max() > 0.0 {
                continue;
            }
            tried += 1;
            assert!(p.qp.eval_cost(&x, &u) >= best - 1e-10);
        }
    }
}

#[test]
fn solver_is_deterministic() {
    let p = pendulum();
    for x in feasible_states(p, 50, 91) {
        assert_eq!(solve_qp(&p.qp, &x).unwrap(), solve_qp(&p.qp, &x).unwrap());
    }
}

//! Terminal ingredients: the LQR weight from the discrete-time Riccati
//! equation and the maximal constraint-admissible invariant set of the LQR loop.

use nalgebra::DMatrix;

use crate::linalg;
use crate::model::OcpSpec;
use crate::polytope::{HPolytope, LpOutcome, REDUNDANCY_TOL};

pub const DARE_MAX_ITER: usize = 10_000;
pub const DARE_STEP_TOL: f64 = 1e-12;
pub const DARE_RESIDUAL_TOL: f64 = 1e-8;
pub const TERMINAL_SET_MAX_STEPS: usize = 500;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LqrError {
    #[error("Riccati iteration did not converge (relative residual {residual:e} after {iterations} steps)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invariant set construction exceeded {0} steps; closed loop is close to marginally stable")]
    NoTermination(usize),
    #[error("closed loop is not stable (spectral radius {0})")]
    Unstable(f64),
    #[error("state or input constraints are unbounded or infeasible")]
    BadConstraints,
}

/// `u = K x` with `K = -(R + B'PB)^{-1} B'PA`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl LqrSolution {
    pub fn closed_loop(&self, spec: &OcpSpec) -> DMatrix<f64> {
        &spec.sys.a + &spec.sys.b * &self.k
    }
}

fn riccati_map(spec: &OcpSpec, p: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (a, b) = (&spec.sys.a, &spec.sys.b);
    let bt_p = b.transpose() * p;
    let s = &spec.r + &bt_p * b;
    let gain = linalg::cholesky(&s)
        .expect("R + B'PB is positive definite")
        .solve(&(&bt_p * a));
    let next = a.transpose() * p * a - a.transpose() * p * b * &gain + &spec.q;
    (linalg::symmetrize(&next), -gain)
}

/// Relative DARE residual `||P - Ric(P)||_F / ||P||_F`.
pub fn dare_residual(spec: &OcpSpec, p: &DMatrix<f64>) -> f64 {
    let (next, _) = riccati_map(spec, p);
    (p - next).norm() / p.norm().max(f64::MIN_POSITIVE)
}

/// Iterates the Riccati map from `P0 = Q`.
pub fn solve_dare(spec: &OcpSpec) -> Result<LqrSolution, LqrError> {
    let mut p = linalg::symmetrize(&spec.q);
    let mut iterations = 0;
    loop {
        let (next, _) = riccati_map(spec, &p);
        iterations += 1;
        let step = (&next - &p).norm();
        p = next;
        if step <= DARE_STEP_TOL * p.norm() {
            break;
        }
        if iterations >= DARE_MAX_ITER {
            return Err(LqrError::NoConvergence {
                iterations,
                residual: dare_residual(spec, &p),
            });
        }
    }
    let residual = dare_residual(spec, &p);
    if residual > DARE_RESIDUAL_TOL {
        return Err(LqrError::NoConvergence {
            iterations,
            residual,
        });
    }
    let (_, k) = riccati_map(spec, &p);
    let sol = LqrSolution { p, k };
    let rho = linalg::spectral_radius(&sol.closed_loop(spec));
    if rho >= 1.0 {
        return Err(LqrError::Unstable(rho));
    }
    Ok(sol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSet {
    /// Irredundant, row-normalized description.
    pub set: HPolytope,
    /// Last prediction step whose constraints were needed.
    pub k_star: usize,
}

/// Maximal constraint-admissible positively invariant set of `x+ = (A + BK) x`
/// subject to `x ∈ X` and `K x ∈ U`.
///
/// Step `k` adds the rows `C (A+BK)^k x <= c`; each candidate row is kept only
/// when its LP maximum over the current set exceeds its bound. The first step
/// that adds nothing fixes `k* = k - 1`.
pub fn gilbert_tan_terminal_set(
    spec: &OcpSpec,
    lqr: &LqrSolution,
) -> Result<TerminalSet, LqrError> {
    let a_cl = lqr.closed_loop(spec);
    let rho = linalg::spectral_radius(&a_cl);
    if rho >= 1.0 {
        return Err(LqrError::Unstable(rho));
    }
    let base_lhs = linalg::vstack(&[spec.x_set.lhs(), &(spec.u_set.lhs() * &lqr.k)]);
    let base_rhs = linalg::vconcat(&[spec.x_set.rhs(), spec.u_set.rhs()]);
    let base = HPolytope::new(base_lhs, base_rhs).normalized();

    let mut current = base.clone();
    let mut power = a_cl.clone();
    let mut k_star = None;
    for k in 1..=TERMINAL_SET_MAX_STEPS {
        let step_lhs = base.lhs() * &power;
        let mut new_rows: Vec<usize> = Vec::new();
        for i in 0..step_lhs.nrows() {
            let row = step_lhs.row(i).transpose();
            if row.norm() == 0.0 {
                continue;
            }
            match current.maximize(&row) {
                LpOutcome::Optimal { value, .. } => {
                    if value > base.rhs()[i] + REDUNDANCY_TOL {
                        new_rows.push(i);
                    }
                }
                LpOutcome::Unbounded => new_rows.push(i),
                LpOutcome::Infeasible => return Err(LqrError::BadConstraints),
            }
        }
        if new_rows.is_empty() {
            k_star = Some(k - 1);
            break;
        }
        let added = HPolytope::new(step_lhs, base.rhs().clone()).select(&new_rows);
        current = current.intersect(&added.normalized());
        power = &a_cl * &power;
    }
    let k_star = k_star.ok_or(LqrError::NoTermination(TERMINAL_SET_MAX_STEPS))?;
    Ok(TerminalSet {
        set: current.remove_redundant().normalized(),
        k_star,
    })
}

//! Dense strictly convex QP solver for the condensed problem.
//!
//! Dual active-set method (Goldfarb–Idnani): start from the unconstrained
//! minimizer, repeatedly pick the most violated constraint (lowest index on
//! ties) and move primal and dual variables until it becomes active, dropping
//! working constraints whose multipliers reach zero. The working set stays
//! linearly independent throughout. Everything is expressed through the
//! cached `H^{-1}G'` and `G H^{-1} G'`, so each iteration only factors a
//! working-set-sized matrix.

use nalgebra::{DMatrix, DVector};

use crate::active_set::ActiveSet;
use crate::condense::CondensedQp;
use crate::linalg;

/// Constraints violated by more than `ADD_TOL * (1 + |rhs|)` enter the working set.
const ADD_TOL: f64 = 1e-10;
/// Residual tolerance defining activity: `|G_i U - w_i - E_i x| <= ACTIVE_TOL * (1 + |w_i + E_i x|)`.
pub const ACTIVE_TOL: f64 = 1e-8;
/// Relative Schur complement below which an added row counts as dependent.
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum QpError {
    #[error("QP infeasible: state outside the feasible set")]
    Infeasible,
    #[error("QP solver exceeded {0} iterations")]
    MaxIterations(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    /// Residual-based active set, weakly active rows included.
    pub active: ActiveSet,
    /// Length `q`; zero outside the working set.
    pub multipliers: DVector<f64>,
    /// Linearly independent working set the solver finished with.
    pub working: ActiveSet,
    pub iterations: usize,
}

impl QpSolution {
    /// First `m` entries, the input applied to the plant.
    pub fn first_input(&self, m: usize) -> DVector<f64> {
        self.u.rows(0, m).into_owned()
    }
}

/// Solves the condensed QP for initial state `x`.
pub fn solve_qp(qp: &CondensedQp, x: &DVector<f64>) -> Result<QpSolution, QpError> {
    let q = qp.dims.q;
    let nu = qp.dims.nu();
    let b = qp.rhs(x);
    let mut u = qp.unconstrained_minimizer(x);
    let mut work: Vec<usize> = Vec::new();
    let mut lam: Vec<f64> = Vec::new();
    let max_iter = 50 * (q + qp.dims.nu()) + 100;
    let mut iterations = 0;

    loop {
        let slack = &qp.g * &u - &b;
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..q {
            if work.contains(&i) {
                continue;
            }
            let v = slack[i];
            if v > ADD_TOL * (1.0 + b[i].abs()) && pick.is_none_or(|(_, best)| v > best) {
                pick = Some((i, v));
            }
        }
        let Some((p, _)) = pick else { break };
        let mut lam_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::MaxIterations(max_iter));
            }
            let r = if work.is_empty() {
                DVector::zeros(0)
            } else {
                let m_aa = DMatrix::from_fn(work.len(), work.len(), |i, j| {
                    qp.ghg[(work[i], work[j])]
                });
                let rhs = DVector::from_fn(work.len(), |i, _| qp.ghg[(work[i], p)]);
                match linalg::cholesky(&m_aa) {
                    Some(ch) => ch.solve(&rhs),
                    None => m_aa.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(work.len())),
                }
            };
            let mut z = -qp.h_inv_gt.column(p).into_owned();
            for (k, &j) in work.iter().enumerate() {
                z += qp.h_inv_gt.column(j) * r[k];
            }
            let decrease: f64 = work
                .iter()
                .enumerate()
                .map(|(k, &j)| qp.ghg[(p, j)] * r[k])
                .sum::<f64>()
                - qp.ghg[(p, p)];

            let viol = qp.g.row(p).dot(&u.transpose()) - b[p];
            // A full working set, or a row dependent on it, leaves no primal
            // direction: only dropping a constraint can make progress.
            let independent = work.len() < nu && -decrease > DEPENDENCE_TOL * qp.ghg[(p, p)];
            let full_step = if independent && qp.ghg[(p, p)] > 0.0 {
                viol.max(0.0) / -decrease
            } else {
                f64::INFINITY
            };
            let mut partial = f64::INFINITY;
            let mut drop_at = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 1e-14 {
                    let t = lam[k].max(0.0) / rk;
                    if t < partial {
                        partial = t;
                        drop_at = Some(k);
                    }
                }
            }
            if full_step.is_infinite() && partial.is_infinite() {
                return Err(QpError::Infeasible);
            }
            let t = full_step.min(partial);
            if full_step.is_finite() {
                u += &z * t;
            }
            for (k, l) in lam.iter_mut().enumerate() {
                *l -= t * r[k];
            }
            lam_p += t;
            if full_step <= partial {
                work.push(p);
                lam.push(lam_p);
                break;
            }
            let k = drop_at.expect("partial step has a blocking multiplier");
            work.remove(k);
            lam.remove(k);
        }
    }

    // Recompute the optimum from the final working set to shed accumulated
    // round-off from the step updates.
    if !work.is_empty() {
        let m_aa = DMatrix::from_fn(work.len(), work.len(), |i, j| qp.ghg[(work[i], work[j])]);
        let g_a = linalg::select_rows(&qp.g, &work);
        let rhs = linalg::select_entries(&b, &work) + &g_a * &qp.h_inv_ft * x;
        if let Some(ch) = linalg::cholesky(&m_aa) {
            let lam_exact = -ch.solve(&rhs);
            if lam_exact.iter().all(|&l| l >= -1e-10) {
                let mut u_exact = qp.unconstrained_minimizer(x);
                for (k, &j) in work.iter().enumerate() {
                    u_exact -= qp.h_inv_gt.column(j) * lam_exact[k];
                }
                let feasible = (&qp.g * &u_exact - &b)
                    .iter()
                    .zip(b.iter())
                    .all(|(s, bi)| *s <= 1e-9 * (1.0 + bi.abs()));
                if feasible {
                    u = u_exact;
                    lam = lam_exact.iter().map(|l| l.max(0.0)).collect();
                }
            }
        }
    }

    let mut multipliers = DVector::zeros(q);
    for (k, &j) in work.iter().enumerate() {
        multipliers[j] = lam[k].max(0.0);
    }
    let active = active_rows(qp, &u, &b);
    Ok(QpSolution {
        u,
        active,
        multipliers,
        working: ActiveSet::from_indices(work),
        iterations,
    })
}

fn active_rows(qp: &CondensedQp, u: &DVector<f64>, b: &DVector<f64>) -> ActiveSet {
    let res = &qp.g * u - b;
    ActiveSet::from_indices(
        (0..qp.dims.q)
            .filter(|&i| res[i].abs() <= ACTIVE_TOL * (1.0 + b[i].abs()))
            .collect(),
    )
}

/// KKT residuals of a candidate solution:
/// (stationarity ∞-norm, worst primal violation, worst complementarity product).
pub fn kkt_residuals(qp: &CondensedQp, x: &DVector<f64>, sol: &QpSolution) -> (f64, f64, f64) {
    let b = qp.rhs(x);
    let stat = &qp.h * &sol.u + qp.f.transpose() * x + qp.g.transpose() * &sol.multipliers;
    let slack = &qp.g * &sol.u - &b;
    let primal = slack.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let compl = (0..qp.dims.q)
        .map(|i| (sol.multipliers[i] * slack[i]).abs())
        .fold(0.0, f64::max);
    (linalg::inf_norm(&stat), primal, compl)
}

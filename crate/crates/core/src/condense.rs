//! Condensing: eliminate the predicted states through the dynamics and stack
//! the constraints so that every row touching only `u(0)` and `x(1)` comes first.
//!
//! Row order, for horizon `N`:
//!
//! ```text
//! [u(0) ∈ U, x(1) ∈ X], [u(1) ∈ U, x(2) ∈ X], …, [u(N-1) ∈ U, x(N) ∈ T], [x(0) ∈ X]
//! ```
//!
//! The objective is `½ U'HU + x'FU + ½ x'Yx` and the constraints `G U <= w + E x`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::linalg;
use crate::model::OcpSpec;
use crate::polytope::HPolytope;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CondenseError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Hessian is not positive definite")]
    HessianNotPd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QpDims {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub q_u: usize,
    pub q_x: usize,
    pub q_t: usize,
    /// Rows on `(u(0), x(1))`. Equals `q_u + q_x` unless `N = 1`, where the
    /// first state block is the terminal set.
    pub q_stage: usize,
    pub q: usize,
}

impl QpDims {
    /// Number of decision variables `mN`.
    pub fn nu(&self) -> usize {
        self.m * self.horizon
    }
}

#[derive(Debug, Clone)]
pub struct CondensedQp {
    pub dims: QpDims,
    pub h: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
    pub e: DMatrix<f64>,
    /// `S = E + G H^{-1} F'`
    pub s: DMatrix<f64>,
    pub h_chol: Cholesky<f64, Dyn>,
    pub h_inv: DMatrix<f64>,
    /// `H^{-1} F'`, i.e. minus the unconstrained gain.
    pub h_inv_ft: DMatrix<f64>,
    /// `H^{-1} G'`
    pub h_inv_gt: DMatrix<f64>,
    /// `G H^{-1} G'`
    pub ghg: DMatrix<f64>,
    /// Stacked `A^k`, `k = 1..N`.
    pub phi: DMatrix<f64>,
    /// Block lower-triangular input-to-state map of the prediction.
    pub gamma: DMatrix<f64>,
    q_bar: DMatrix<f64>,
    r_bar: DMatrix<f64>,
    q0: DMatrix<f64>,
}

/// Builds the condensed QP with terminal weight `p` and terminal set `tset`.
pub fn build_condensed_qp(
    spec: &OcpSpec,
    p: &DMatrix<f64>,
    tset: &HPolytope,
) -> Result<CondensedQp, CondenseError> {
    let (n, m, horizon) = (spec.sys.n(), spec.sys.m(), spec.horizon);
    if horizon == 0 {
        return Err(CondenseError::Dimension("horizon must be positive".into()));
    }
    if p.shape() != (n, n) || tset.dim() != n {
        return Err(CondenseError::Dimension(format!(
            "terminal weight {:?} / set dimension {} do not match n = {n}",
            p.shape(),
            tset.dim()
        )));
    }
    let nu = m * horizon;
    let (a, b) = (&spec.sys.a, &spec.sys.b);

    let mut phi = DMatrix::zeros(n * horizon, n);
    let mut gamma = DMatrix::zeros(n * horizon, nu);
    let mut a_pow = DMatrix::identity(n, n);
    // a_pows[k] = A^k
    let mut a_pows = Vec::with_capacity(horizon + 1);
    a_pows.push(a_pow.clone());
    for k in 1..=horizon {
        a_pow = a * &a_pow;
        phi.view_mut(((k - 1) * n, 0), (n, n)).copy_from(&a_pow);
        a_pows.push(a_pow.clone());
    }
    for k in 1..=horizon {
        for j in 0..k {
            let blk = &a_pows[k - 1 - j] * b;
            gamma.view_mut(((k - 1) * n, j * m), (n, m)).copy_from(&blk);
        }
    }

    let mut q_bar = DMatrix::zeros(n * horizon, n * horizon);
    for k in 0..horizon {
        let w = if k + 1 == horizon { p } else { &spec.q };
        q_bar.view_mut((k * n, k * n), (n, n)).copy_from(w);
    }
    let mut r_bar = DMatrix::zeros(nu, nu);
    for k in 0..horizon {
        r_bar.view_mut((k * m, k * m), (m, m)).copy_from(&spec.r);
    }

    let h = linalg::symmetrize(&((gamma.transpose() * &q_bar * &gamma + &r_bar) * 2.0));
    let f = phi.transpose() * &q_bar * &gamma * 2.0;
    let y = linalg::symmetrize(&((&spec.q + phi.transpose() * &q_bar * &phi) * 2.0));

    let (cu, wu) = (spec.u_set.lhs(), spec.u_set.rhs());
    let (cx, wx) = (spec.x_set.lhs(), spec.x_set.rhs());
    let (ct, wt) = (tset.lhs(), tset.rhs());
    let (q_u, q_x, q_t) = (cu.nrows(), cx.nrows(), ct.nrows());
    let q = horizon * q_u + (horizon - 1) * q_x + q_t + q_x;

    let mut g = DMatrix::zeros(q, nu);
    let mut w = DVector::zeros(q);
    let mut e = DMatrix::zeros(q, n);
    let mut row = 0;
    for k in 0..horizon {
        g.view_mut((row, k * m), (q_u, m)).copy_from(cu);
        w.rows_mut(row, q_u).copy_from(wu);
        row += q_u;
        let (cs, ws) = if k + 1 == horizon { (ct, wt) } else { (cx, wx) };
        let rs = cs.nrows();
        let gamma_row = gamma.view((k * n, 0), (n, nu));
        let phi_row = phi.view((k * n, 0), (n, n));
        g.view_mut((row, 0), (rs, nu)).copy_from(&(cs * gamma_row));
        w.rows_mut(row, rs).copy_from(ws);
        e.view_mut((row, 0), (rs, n)).copy_from(&(-(cs * phi_row)));
        row += rs;
    }
    w.rows_mut(row, q_x).copy_from(wx);
    e.view_mut((row, 0), (q_x, n)).copy_from(&(-cx));
    debug_assert_eq!(row + q_x, q);

    let h_chol = linalg::cholesky(&h).ok_or(CondenseError::HessianNotPd)?;
    let h_inv = h_chol.inverse();
    let h_inv_ft = h_chol.solve(&f.transpose());
    let h_inv_gt = h_chol.solve(&g.transpose());
    let s = &e + &g * &h_inv_ft;
    let ghg = linalg::symmetrize(&(&g * &h_inv_gt));
    let q_stage = q_u + if horizon == 1 { q_t } else { q_x };

    Ok(CondensedQp {
        dims: QpDims {
            n,
            m,
            horizon,
            q_u,
            q_x,
            q_t,
            q_stage,
            q,
        },
        h,
        f,
        y,
        g,
        w,
        e,
        s,
        h_chol,
        h_inv,
        h_inv_ft,
        h_inv_gt,
        ghg,
        phi,
        gamma,
        q_bar,
        r_bar,
        q0: spec.q.clone(),
    })
}

impl CondensedQp {
    /// `½ U'HU + x'FU + ½ x'Yx`
    pub fn eval_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + x.dot(&(&self.f * u)) + 0.5 * x.dot(&(&self.y * x))
    }

    /// Stage-by-stage cost of the rolled-out trajectory; equal to
    /// [`eval_cost`](Self::eval_cost) up to round-off.
    pub fn rollout_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let xs = self.predicted_states(x, u);
        let mut cost = x.dot(&(&self.q0 * x));
        cost += xs.dot(&(&self.q_bar * &xs));
        cost += u.dot(&(&self.r_bar * u));
        cost
    }

    /// Stacked predicted states `x(1), …, x(N)`.
    pub fn predicted_states(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.phi * x + &self.gamma * u
    }

    /// Right-hand side `w + E x`.
    pub fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w + &self.e * x
    }

    /// `-H^{-1}F' x`
    pub fn unconstrained_minimizer(&self, x: &DVector<f64>) -> DVector<f64> {
        -(&self.h_inv_ft * x)
    }

    pub fn dump(&self) -> QpDump {
        QpDump {
            dims: self.dims,
            h: linalg::rows_of(&self.h),
            f: linalg::rows_of(&self.f),
            g: linalg::rows_of(&self.g),
            w: self.w.iter().cloned().collect(),
            e: linalg::rows_of(&self.e),
            s: linalg::rows_of(&self.s),
        }
    }
}

/// JSON debug dump of the condensed matrices.
#[derive(Debug, Serialize)]
pub struct QpDump {
    pub dims: QpDims,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    pub w: Vec<f64>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<f64>>,
}

//! The affine control law an active set induces, and the polytope on which it
//! is optimal.

use nalgebra::{DMatrix, DVector};

use crate::active_set::ActiveSet;
use crate::condense::CondensedQp;
use crate::linalg;
use crate::polytope::HPolytope;

/// Relative singular-value threshold for the full-row-rank test on `G_A`.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RegionalError {
    #[error("G_A is rank deficient for active set {0}")]
    RankDeficient(ActiveSet),
}

/// `U = Kbar x + bbar`, the full-horizon control law.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLaw {
    pub kbar: DMatrix<f64>,
    pub bbar: DVector<f64>,
}

/// `u(0) = K x + b`
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    pub k: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl FeedbackLaw {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k * x + &self.b
    }
}

impl ControlLaw {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.kbar * x + &self.bbar
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionalLaw {
    pub control: ControlLaw,
    pub feedback: FeedbackLaw,
    /// Row-normalized region of validity.
    pub region: HPolytope,
    pub source: ActiveSet,
}

impl RegionalLaw {
    pub fn build(qp: &CondensedQp, active: &ActiveSet) -> Result<Self, RegionalError> {
        let fac = Factored::new(qp, active)?;
        let control = fac.control_law(qp);
        Ok(RegionalLaw {
            feedback: feedback_head(&control, qp.dims.m),
            control,
            region: fac.polytope(qp),
            source: active.clone(),
        })
    }
}

/// Full-row-rank test on `G_A`. Sets larger than `mN` fail immediately.
pub fn has_full_row_rank(qp: &CondensedQp, active: &ActiveSet) -> bool {
    if active.is_empty() {
        return true;
    }
    if active.len() > qp.dims.nu() {
        return false;
    }
    linalg::has_full_row_rank(&linalg::select_rows(&qp.g, active.indices()), RANK_TOL)
}

/// Quantities shared by the law and the polytope of one active set:
/// `W S_A`, `W w_A` with `W = (G_A H^{-1} G_A')^{-1}`.
struct Factored<'a> {
    active: &'a ActiveSet,
    ws: DMatrix<f64>,
    ww: DVector<f64>,
}

impl<'a> Factored<'a> {
    fn new(qp: &CondensedQp, active: &'a ActiveSet) -> Result<Self, RegionalError> {
        let n = qp.dims.n;
        if active.is_empty() {
            return Ok(Factored {
                active,
                ws: DMatrix::zeros(0, n),
                ww: DVector::zeros(0),
            });
        }
        if !has_full_row_rank(qp, active) {
            return Err(RegionalError::RankDeficient(active.clone()));
        }
        let idx = active.indices();
        let m_aa = DMatrix::from_fn(idx.len(), idx.len(), |i, j| qp.ghg[(idx[i], idx[j])]);
        let ch = linalg::cholesky(&m_aa)
            .ok_or_else(|| RegionalError::RankDeficient(active.clone()))?;
        let ws = ch.solve(&linalg::select_rows(&qp.s, idx));
        let ww = ch.solve(&linalg::select_entries(&qp.w, idx));
        Ok(Factored { active, ws, ww })
    }

    fn control_law(&self, qp: &CondensedQp) -> ControlLaw {
        let idx = self.active.indices();
        let hgt = DMatrix::from_fn(qp.dims.nu(), idx.len(), |r, c| qp.h_inv_gt[(r, idx[c])]);
        ControlLaw {
            kbar: &hgt * &self.ws - &qp.h_inv_ft,
            bbar: &hgt * &self.ww,
        }
    }

    fn polytope(&self, qp: &CondensedQp) -> HPolytope {
        let idx = self.active.indices();
        let inactive = self.active.complement(qp.dims.q);
        let ghg_ia = DMatrix::from_fn(inactive.len(), idx.len(), |r, c| {
            qp.ghg[(inactive[r], idx[c])]
        });
        let lower_lhs = &ghg_ia * &self.ws - linalg::select_rows(&qp.s, &inactive);
        let lower_rhs = linalg::select_entries(&qp.w, &inactive) - &ghg_ia * &self.ww;
        HPolytope::new(
            linalg::vstack(&[&self.ws, &lower_lhs]),
            linalg::vconcat(&[&(-&self.ww), &lower_rhs]),
        )
        .normalized()
    }
}

/// `Kbar = H^{-1}G_A' W S_A - H^{-1}F'`, `bbar = H^{-1}G_A' W w_A`.
pub fn control_law_from_active_set(
    qp: &CondensedQp,
    active: &ActiveSet,
) -> Result<ControlLaw, RegionalError> {
    Ok(Factored::new(qp, active)?.control_law(qp))
}

/// Region where the multipliers of `A` stay nonnegative and the inactive rows
/// stay satisfied, rows normalized.
pub fn polytope_from_active_set(
    qp: &CondensedQp,
    active: &ActiveSet,
) -> Result<HPolytope, RegionalError> {
    Ok(Factored::new(qp, active)?.polytope(qp))
}

/// First `m` rows of a control law.
pub fn feedback_head(law: &ControlLaw, m: usize) -> FeedbackLaw {
    FeedbackLaw {
        k: law.kbar.rows(0, m).into_owned(),
        b: law.bbar.rows(0, m).into_owned(),
    }
}

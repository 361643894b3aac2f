use nalgebra::DMatrix;

use crate::condense::{build_condensed_qp, CondenseError, CondensedQp};
use crate::lqr::{self, LqrError, LqrSolution};
use crate::model::OcpSpec;
use crate::polytope::HPolytope;

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error(transparent)]
    Lqr(#[from] LqrError),
    #[error(transparent)]
    Condense(#[from] CondenseError),
}

/// Everything the online controller needs, computed once: terminal
/// ingredients and the condensed QP.
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub spec: OcpSpec,
    pub lqr: LqrSolution,
    pub p: DMatrix<f64>,
    pub terminal_set: HPolytope,
    /// `None` when the terminal set came from the config.
    pub terminal_k_star: Option<usize>,
    pub qp: CondensedQp,
}

impl MpcProblem {
    /// Uses `P` and `T` from the spec when present; otherwise solves the DARE
    /// and builds the maximal admissible invariant set of the LQR loop.
    pub fn build(spec: OcpSpec) -> Result<Self, ProblemError> {
        let lqr = lqr::solve_dare(&spec)?;
        let p = spec.p.clone().unwrap_or_else(|| lqr.p.clone());
        let (terminal_set, terminal_k_star) = match &spec.t_set {
            Some(t) => (t.clone(), None),
            None => {
                let ts = lqr::gilbert_tan_terminal_set(&spec, &lqr)?;
                (ts.set, Some(ts.k_star))
            }
        };
        let qp = build_condensed_qp(&spec, &p, &terminal_set)?;
        Ok(MpcProblem {
            spec,
            lqr,
            p,
            terminal_set,
            terminal_k_star,
            qp,
        })
    }

    pub fn n(&self) -> usize {
        self.spec.sys.n()
    }

    pub fn m(&self) -> usize {
        self.spec.sys.m()
    }
}

//! The local node: evaluates cached affine laws and asks the central node for
//! a new active set whenever the state leaves every cached polytope.

use std::sync::Arc;

use mpc_reuse_core::closed_loop::ClosedLoopTrace;
use mpc_reuse_core::common_law::{simplified_feedback, stage_subset};
use mpc_reuse_core::linalg;
use mpc_reuse_core::polytope::HPolytope;
use mpc_reuse_core::regional::{
    self, control_law_from_active_set, feedback_head, FeedbackLaw, RegionalLaw,
};
use mpc_reuse_core::{ActiveSet, CondensedQp, MpcProblem};
use nalgebra::DVector;
use tokio::io::{AsyncRead, AsyncWrite};

use crate::wire::{read_frame, write_frame, ErrorCode, Frame, WireError};

#[derive(Debug, thiserror::Error)]
pub enum LocalError {
    #[error("infeasible initial state")]
    Infeasible,
    #[error("central node rejected the request as malformed")]
    Rejected,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("terminal set not reached within {0} steps")]
    MaxIterations(usize),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SessionStats {
    pub requests: usize,
    pub steps: usize,
    pub l_limit: usize,
}

/// Law and polytopes reconstructed from one response.
enum Cache {
    Empty,
    Law {
        law: FeedbackLaw,
        regions: Vec<HPolytope>,
    },
}

impl Cache {
    fn query(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Cache::Empty => None,
            Cache::Law { law, regions } => regions.iter().any(|r| r.contains(x)).then(|| law.eval(x)),
        }
    }
}

/// Rows of `set` kept greedily in index order while they stay independent.
fn independent_rows(qp: &CondensedQp, set: &ActiveSet) -> ActiveSet {
    let mut kept: Vec<usize> = Vec::new();
    for &i in set.indices() {
        kept.push(i);
        let g = linalg::select_rows(&qp.g, &kept);
        if linalg::rank(&g, regional::RANK_TOL) < kept.len() {
            kept.pop();
        }
    }
    ActiveSet::from_indices(kept)
}

#[derive(Clone)]
pub struct LocalNode {
    problem: Arc<MpcProblem>,
    count_entry_step: bool,
}

impl LocalNode {
    /// `count_entry_step` mirrors the closed-loop accounting: the step that
    /// enters the terminal set costs one request.
    pub fn new(problem: Arc<MpcProblem>, count_entry_step: bool) -> Self {
        LocalNode {
            problem,
            count_entry_step,
        }
    }

    /// Input at `x` and the structure to reuse afterwards.
    fn reconstruct(
        &self,
        x: &DVector<f64>,
        criterion: bool,
        q: usize,
        sets: &[ActiveSet],
    ) -> Result<(DVector<f64>, Cache), LocalError> {
        let qp = &self.problem.qp;
        let dims = qp.dims;
        if q != dims.q {
            return Err(LocalError::Protocol(format!("q = {q}, expected {}", dims.q)));
        }
        let Some(first) = sets.first() else {
            return Err(LocalError::Protocol("response without active sets".into()));
        };
        if criterion {
            let stage = stage_subset(first, dims.q_stage);
            if sets.iter().any(|s| stage_subset(s, dims.q_stage) != stage) {
                return Err(LocalError::Protocol("sets differ in their stage subset".into()));
            }
            let law = simplified_feedback(qp, &stage)
                .map_err(|e| LocalError::Protocol(e.to_string()))?;
            let regions = sets
                .iter()
                .filter_map(|s| regional::polytope_from_active_set(qp, s).ok())
                .collect();
            return Ok((law.eval(x), Cache::Law { law, regions }));
        }
        if sets.len() != 1 {
            return Err(LocalError::Protocol("expected exactly one set".into()));
        }
        match RegionalLaw::build(qp, first) {
            Ok(rl) => Ok((
                rl.feedback.eval(x),
                Cache::Law {
                    law: rl.feedback,
                    regions: vec![rl.region],
                },
            )),
            // Dependent rows are implied by the others at x, so the law of an
            // independent subset gives the optimum there. No region is cached.
            Err(_) => {
                let law = control_law_from_active_set(qp, &independent_rows(qp, first))
                    .map_err(|e| LocalError::Protocol(e.to_string()))?;
                Ok((feedback_head(&law, dims.m).eval(x), Cache::Empty))
            }
        }
    }

    async fn request<S>(&self, stream: &mut S, x: &DVector<f64>) -> Result<Frame, LocalError>
    where
        S: AsyncRead + AsyncWrite + Unpin,
    {
        write_frame(
            stream,
            &Frame::Request {
                state: x.iter().copied().collect(),
            },
        )
        .await?;
        match read_frame(stream).await? {
            Some(frame) => Ok(frame),
            None => Err(LocalError::Protocol("central node closed the session".into())),
        }
    }

    /// Drives one closed-loop trajectory from `x0` until the terminal set.
    pub async fn run<S>(
        &self,
        stream: &mut S,
        x0: &DVector<f64>,
        max_steps: usize,
        l_limit: usize,
    ) -> Result<(SessionStats, ClosedLoopTrace), LocalError>
    where
        S: AsyncRead + AsyncWrite + Unpin,
    {
        let sys = &self.problem.spec.sys;
        let terminal = &self.problem.terminal_set;
        let mut stats = SessionStats {
            l_limit,
            ..Default::default()
        };
        let mut trace = ClosedLoopTrace {
            states: vec![x0.clone()],
            ..Default::default()
        };
        let mut cache = Cache::Empty;
        for k in 0..=max_steps {
            let x = trace.states[k].clone();
            if terminal.contains(&x) {
                trace.entered_terminal_at = Some(k);
                if self.count_entry_step && k > 0 {
                    // The empty active set returned here tells the node it has arrived.
                    self.request(stream, &x).await?;
                    stats.requests += 1;
                    stats.steps += 1;
                    trace.entry_qp = true;
                }
                return Ok((stats, trace));
            }
            if k == max_steps {
                break;
            }
            let u = match cache.query(&x) {
                Some(u) => {
                    trace.e.push(0);
                    u
                }
                None => {
                    stats.requests += 1;
                    trace.qp_count += 1;
                    trace.e.push(1);
                    match self.request(stream, &x).await? {
                        Frame::Response { criterion, q, sets } => {
                            let (u, next) = self.reconstruct(&x, criterion, q, &sets)?;
                            cache = next;
                            u
                        }
                        Frame::Error(ErrorCode::Infeasible) if k == 0 => {
                            return Err(LocalError::Infeasible)
                        }
                        Frame::Error(ErrorCode::Infeasible) => {
                            return Err(LocalError::Protocol(format!(
                                "state became infeasible at step {k}"
                            )))
                        }
                        Frame::Error(ErrorCode::Malformed) => return Err(LocalError::Rejected),
                        Frame::Request { .. } => {
                            return Err(LocalError::Protocol("request frame from central".into()))
                        }
                    }
                }
            };
            stats.steps += 1;
            trace.solved_sets.push(None);
            trace.states.push(sys.step(&x, &u));
            trace.inputs.push(u);
        }
        Err(LocalError::MaxIterations(max_steps))
    }
}

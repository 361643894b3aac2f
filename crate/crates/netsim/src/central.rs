//! The central node: solves QPs on demand and answers with candidate active sets.

use std::sync::Arc;

use log::{debug, warn};
use mpc_reuse_core::common_law::{candidate_family, criterion_applies, DEFAULT_FAMILY_CAP};
use mpc_reuse_core::qp::solve_qp;
use mpc_reuse_core::MpcProblem;
use nalgebra::DVector;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpListener;
use tokio::sync::watch;

use crate::wire::{read_frame, sort_and_truncate, write_frame, ErrorCode, Frame, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CentralConfig {
    /// Maximum number of sets per response.
    pub max_sets: usize,
    /// Apply the stage-subset criterion. Off, every response carries `{A}` only.
    pub criterion: bool,
    pub family_cap: usize,
}

impl CentralConfig {
    pub fn new(max_sets: usize) -> Self {
        CentralConfig {
            max_sets: max_sets.max(1),
            criterion: true,
            family_cap: DEFAULT_FAMILY_CAP,
        }
    }

    /// Configuration of an experiment run with limit `l`. A limit of one is
    /// the baseline itself.
    pub fn for_limit(l: usize) -> Self {
        if l <= 1 {
            CentralConfig::baseline()
        } else {
            CentralConfig::new(l)
        }
    }

    /// One set per response and no criterion: the single-polytope baseline.
    pub fn baseline() -> Self {
        CentralConfig {
            criterion: false,
            ..CentralConfig::new(1)
        }
    }
}

#[derive(Clone)]
pub struct CentralNode {
    problem: Arc<MpcProblem>,
    config: CentralConfig,
}

impl CentralNode {
    pub fn new(problem: Arc<MpcProblem>, config: CentralConfig) -> Self {
        CentralNode { problem, config }
    }

    pub fn config(&self) -> CentralConfig {
        self.config
    }

    /// Answer to one decoded request.
    pub fn handle_request(&self, state: &[f64]) -> Frame {
        let qp = &self.problem.qp;
        if state.len() != qp.dims.n || state.iter().any(|v| !v.is_finite()) {
            return Frame::Error(ErrorCode::Malformed);
        }
        let x = DVector::from_column_slice(state);
        let Ok(sol) = solve_qp(qp, &x) else {
            return Frame::Error(ErrorCode::Infeasible);
        };
        let q = qp.dims.q;
        let active = sol.active;
        if self.config.criterion && criterion_applies(qp, &active) {
            let family = candidate_family(&active, qp.dims.q_stage, self.config.family_cap)
                .unwrap_or_else(|_| vec![active.clone()]);
            Frame::Response {
                criterion: true,
                q,
                sets: sort_and_truncate(family, self.config.max_sets),
            }
        } else {
            Frame::Response {
                criterion: false,
                q,
                sets: vec![active],
            }
        }
    }

    /// Serves one session until the peer closes the stream. A frame that
    /// cannot be parsed is answered with a malformed-request error and ends
    /// the session, since the stream position is lost.
    pub async fn serve_stream<S>(&self, stream: &mut S) -> Result<(), WireError>
    where
        S: AsyncRead + AsyncWrite + Unpin,
    {
        loop {
            let reply = match read_frame(stream).await {
                Ok(None) => return Ok(()),
                Ok(Some(Frame::Request { state })) => self.handle_request(&state),
                Ok(Some(_)) => Frame::Error(ErrorCode::Malformed),
                Err(WireError::Io(e)) => return Err(e.into()),
                Err(e) => {
                    debug!("malformed frame: {e}");
                    write_frame(stream, &Frame::Error(ErrorCode::Malformed)).await?;
                    return Err(e);
                }
            };
            write_frame(stream, &reply).await?;
        }
    }

    /// Accepts TCP sessions until `shutdown` turns true.
    pub async fn serve_tcp(
        &self,
        listener: TcpListener,
        mut shutdown: watch::Receiver<bool>,
    ) -> std::io::Result<()> {
        loop {
            tokio::select! {
                accepted = listener.accept() => {
                    let (mut socket, peer) = accepted?;
                    socket.set_nodelay(true)?;
                    let node = self.clone();
                    tokio::spawn(async move {
                        if let Err(e) = node.serve_stream(&mut socket).await {
                            warn!("session with {peer} dropped: {e}");
                        }
                    });
                }
                changed = shutdown.changed() => {
                    if changed.is_err() || *shutdown.borrow() {
                        return Ok(());
                    }
                }
            }
        }
    }
}

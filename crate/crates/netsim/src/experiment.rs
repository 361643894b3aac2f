//! Many local sessions against a central node, and the request-count report.

use std::net::SocketAddr;
use std::sync::Arc;

use log::warn;
use mpc_reuse_core::closed_loop::ClosedLoopTrace;
use mpc_reuse_core::MpcProblem;
use nalgebra::DVector;
use serde::Serialize;
use tokio::io::{duplex, AsyncRead, AsyncWrite};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::central::{CentralConfig, CentralNode};
use crate::local::{LocalError, LocalNode, SessionStats};

const PIPE_CAPACITY: usize = 1 << 16;

pub trait ByteStream: AsyncRead + AsyncWrite + Unpin + Send {}
impl<T: AsyncRead + AsyncWrite + Unpin + Send> ByteStream for T {}

/// How a local session reaches its central node.
#[derive(Clone)]
pub enum Transport {
    /// In-memory pipe to a central node served on the same runtime.
    InProcess(CentralNode),
    Tcp(SocketAddr),
}

impl Transport {
    pub async fn connect(&self) -> std::io::Result<Box<dyn ByteStream>> {
        match self {
            Transport::InProcess(node) => {
                let (near, mut far) = duplex(PIPE_CAPACITY);
                let node = node.clone();
                tokio::spawn(async move {
                    if let Err(e) = node.serve_stream(&mut far).await {
                        warn!("in-process session dropped: {e}");
                    }
                });
                Ok(Box::new(near))
            }
            Transport::Tcp(addr) => {
                let s = TcpStream::connect(addr).await?;
                s.set_nodelay(true)?;
                Ok(Box::new(s))
            }
        }
    }
}

/// A central node listening on an ephemeral loopback port.
pub struct LoopbackServer {
    pub addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<std::io::Result<()>>,
}

impl LoopbackServer {
    pub async fn start(node: CentralNode) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let (shutdown, rx) = watch::channel(false);
        let task = tokio::spawn(async move { node.serve_tcp(listener, rx).await });
        Ok(LoopbackServer {
            addr,
            shutdown,
            task,
        })
    }

    pub async fn stop(self) -> std::io::Result<()> {
        let _ = self.shutdown.send(true);
        self.task.await.map_err(std::io::Error::other)?
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SessionOptions {
    pub max_steps: usize,
    pub count_entry_step: bool,
    /// Concurrent connections; each runs its share of trajectories in order.
    pub workers: usize,
    /// Recorded in the stats; the central node enforces the actual limit.
    pub l_limit: usize,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            max_steps: mpc_reuse_core::closed_loop::DEFAULT_MAX_STEPS,
            count_entry_step: true,
            workers: 4,
            l_limit: 1,
        }
    }
}

/// Runs one session per initial state. Trajectory `i` goes to worker
/// `i % workers`; results come back in input order.
pub async fn run_sessions(
    problem: Arc<MpcProblem>,
    transport: &Transport,
    x0s: &[DVector<f64>],
    opts: SessionOptions,
) -> Result<Vec<(SessionStats, ClosedLoopTrace)>, LocalError> {
    let workers = opts.workers.clamp(1, x0s.len().max(1));
    let node = LocalNode::new(problem, opts.count_entry_step);
    let mut handles = Vec::with_capacity(workers);
    for w in 0..workers {
        let jobs: Vec<(usize, DVector<f64>)> = x0s
            .iter()
            .enumerate()
            .skip(w)
            .step_by(workers)
            .map(|(i, x)| (i, x.clone()))
            .collect();
        let node = node.clone();
        let transport = transport.clone();
        handles.push(tokio::spawn(async move {
            let mut stream = transport.connect().await.map_err(crate::WireError::from)?;
            let mut out = Vec::with_capacity(jobs.len());
            for (i, x0) in jobs {
                let r = node.run(&mut stream, &x0, opts.max_steps, opts.l_limit).await?;
                out.push((i, r));
            }
            Ok::<_, LocalError>(out)
        }));
    }
    let mut results: Vec<Option<(SessionStats, ClosedLoopTrace)>> = vec![None; x0s.len()];
    for h in handles {
        let part = h
            .await
            .map_err(|e| LocalError::Protocol(format!("session task failed: {e}")))??;
        for (i, r) in part {
            results[i] = Some(r);
        }
    }
    Ok(results.into_iter().map(|r| r.expect("every index ran")).collect())
}

/// Requests with and without the criterion over the same initial states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetsimReport {
    pub n: usize,
    pub seed: u64,
    pub l: usize,
    pub requests: usize,
    pub baseline_requests: usize,
    pub steps: usize,
    /// `1 - requests / baseline_requests`
    pub reduction: f64,
}

impl NetsimReport {
    pub fn new(seed: u64, l: usize, runs: &[SessionStats], baseline: &[SessionStats]) -> Self {
        let requests: usize = runs.iter().map(|s| s.requests).sum();
        let baseline_requests: usize = baseline.iter().map(|s| s.requests).sum();
        NetsimReport {
            n: runs.len(),
            seed,
            l,
            requests,
            baseline_requests,
            steps: runs.iter().map(|s| s.steps).sum(),
            reduction: 1.0 - requests as f64 / baseline_requests.max(1) as f64,
        }
    }
}

/// Runs the baseline and each `l` in-process over the same initial states.
pub async fn reduction_sweep(
    problem: Arc<MpcProblem>,
    x0s: &[DVector<f64>],
    seed: u64,
    ls: &[usize],
    opts: SessionOptions,
) -> Result<Vec<NetsimReport>, LocalError> {
    let base_node = CentralNode::new(problem.clone(), CentralConfig::baseline());
    let baseline = run_sessions(
        problem.clone(),
        &Transport::InProcess(base_node),
        x0s,
        SessionOptions { l_limit: 1, ..opts },
    )
    .await?;
    let baseline: Vec<SessionStats> = baseline.into_iter().map(|(s, _)| s).collect();
    let mut out = Vec::new();
    for &l in ls {
        let node = CentralNode::new(problem.clone(), CentralConfig::for_limit(l));
        let runs = run_sessions(
            problem.clone(),
            &Transport::InProcess(node),
            x0s,
            SessionOptions { l_limit: l, ..opts },
        )
        .await?;
        let runs: Vec<SessionStats> = runs.into_iter().map(|(s, _)| s).collect();
        out.push(NetsimReport::new(seed, l, &runs, &baseline));
    }
    Ok(out)
}

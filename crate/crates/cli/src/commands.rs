use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use mpc_reuse_core::atlas::{enumerate_by_grid, ActiveSetAtlas, AtlasError};
use mpc_reuse_core::closed_loop::{
    compare_strategies, sample_initial_states, BatchStats, ClosedLoopTrace, SimError, SimOptions,
    Simulator, Strategy,
};
use mpc_reuse_core::model::load_config;
use mpc_reuse_core::regional::polytope_from_active_set;
use mpc_reuse_core::{ActiveSet, MpcProblem};
use mpc_reuse_netsim::{
    run_sessions, CentralConfig, CentralNode, LocalError, NetsimReport, SessionOptions,
    SessionStats, Transport,
};
use nalgebra::DVector;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{AtlasArgs, BatchArgs, NetsimArgs, ServeArgs, SimulateArgs};

/// Grid resolution for two-state problems; larger problems use a coarse grid.
const DEFAULT_GRID_2D: usize = 201;
const DEFAULT_GRID_ND: usize = 11;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("infeasible initial state")]
    Infeasible,
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub const USAGE_EXIT: u8 = 64;

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Infeasible => 2,
            CliError::Usage(_) => Self::USAGE_EXIT,
            _ => 1,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InfeasibleInitialState => CliError::Infeasible,
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<LocalError> for CliError {
    fn from(e: LocalError) -> Self {
        match e {
            LocalError::Infeasible => CliError::Infeasible,
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<AtlasError> for CliError {
    fn from(e: AtlasError) -> Self {
        CliError::Run(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Run(e.to_string()))
}

fn load_problem(path: &Path) -> Result<MpcProblem, CliError> {
    let spec = load_config(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    MpcProblem::build(spec).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn parse_state(text: &str, n: usize) -> Result<DVector<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| CliError::Usage(format!("bad --x0 `{text}`: {e}")))?;
    if vals.len() != n {
        return Err(CliError::Usage(format!(
            "--x0 has {} components, the model has {n} states",
            vals.len()
        )));
    }
    Ok(DVector::from_vec(vals))
}

fn parse_strategies(names: &[String]) -> Result<Vec<Strategy>, CliError> {
    names
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Strategy>().map_err(CliError::Usage))
        .collect()
}

fn build_atlas(problem: &MpcProblem, grid: Option<usize>) -> Result<ActiveSetAtlas, CliError> {
    let pts = grid.unwrap_or(if problem.n() == 2 {
        DEFAULT_GRID_2D
    } else {
        DEFAULT_GRID_ND
    });
    info!("building atlas on a {pts}-point grid per axis");
    Ok(enumerate_by_grid(&problem.qp, &problem.spec.x_set, pts)?)
}

#[derive(Serialize)]
struct RegionVertices {
    step: usize,
    /// One-based constraint indices.
    set: ActiveSet,
    vertices: Vec<[f64; 2]>,
}

/// Polygons of every region built along a two-state trajectory. Strategies
/// that keep no polytope of their own contribute the polytope of each solved
/// active set.
fn region_vertices(problem: &MpcProblem, trace: &ClosedLoopTrace) -> Vec<RegionVertices> {
    let mut out = Vec::new();
    let mut push = |step: usize, set: &ActiveSet, poly: &mpc_reuse_core::HPolytope| {
        if let Ok(v) = poly.vertices_2d() {
            out.push(RegionVertices {
                step,
                set: set.clone(),
                vertices: v.iter().map(|p| [p[0], p[1]]).collect(),
            });
        }
    };
    for (k, solved) in trace.solved_sets.iter().enumerate() {
        let Some(active) = solved else { continue };
        let built: Vec<_> = trace.regions.iter().filter(|r| r.step == k).collect();
        if built.is_empty() {
            if let Ok(poly) = polytope_from_active_set(&problem.qp, active) {
                push(k, active, &poly);
            }
        } else {
            for r in built {
                push(k, &r.set, &r.polytope);
            }
        }
    }
    out
}

pub fn simulate(a: &SimulateArgs, argv: &[String]) -> Result<(), CliError> {
    let problem = load_problem(&a.config)?;
    let strategy: Strategy = a.strategy.parse().map_err(CliError::Usage)?;
    let x0 = parse_state(&a.x0, problem.n())?;
    let atlas = match strategy {
        Strategy::GammaOracle => Some(build_atlas(&problem, a.grid)?),
        _ => None,
    };
    let opts = SimOptions {
        max_steps: a.max_steps,
        record_regions: problem.n() == 2,
        ..SimOptions::default()
    };
    let mut sim = Simulator::new(&problem).with_options(opts);
    if let Some(at) = atlas.as_ref() {
        sim = sim.with_atlas(at);
    }
    let trace = sim.simulate(strategy, &x0)?;
    write(&a.out, &trace.to_csv())?;

    let mut manifest = RunManifest::new(&a.config, "simulate", argv);
    manifest.strategy = Some(strategy.name().to_string());
    manifest.outputs.push(a.out.clone());
    if problem.n() == 2 {
        let path = a.regions.clone().unwrap_or_else(|| {
            let mut p = a.out.as_os_str().to_owned();
            p.push(".regions.json");
            PathBuf::from(p)
        });
        write(&path, &to_json(&region_vertices(&problem, &trace))?)?;
        manifest.outputs.push(path);
    }
    manifest
        .write_beside_outputs()
        .map_err(|e| io_err(&a.out, e))?;
    println!(
        "{} steps, {} QPs, reuse {:.1}%",
        trace.steps(),
        trace.qp_count,
        if trace.steps() == 0 {
            0.0
        } else {
            100.0 * (trace.steps() - trace.qp_count) as f64 / trace.steps() as f64
        }
    );
    Ok(())
}

/// One line of the batch JSON.
#[derive(Serialize)]
struct BatchRecord {
    strategy: &'static str,
    n: usize,
    seed: u64,
    reuse_pct: f64,
    total_qps: usize,
    mean_steps: f64,
}

impl From<&BatchStats> for BatchRecord {
    fn from(s: &BatchStats) -> Self {
        BatchRecord {
            strategy: s.strategy.name(),
            n: s.n,
            seed: s.seed,
            reuse_pct: s.reuse_pct,
            total_qps: s.total_qps,
            mean_steps: s.mean_steps,
        }
    }
}

pub fn batch(a: &BatchArgs, argv: &[String]) -> Result<(), CliError> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let problem = load_problem(&a.config)?;
    let strategies = parse_strategies(&a.strategies)?;
    if strategies.is_empty() {
        return Err(CliError::Usage("no strategies given".into()));
    }
    let atlas = if strategies.contains(&Strategy::GammaOracle) {
        Some(build_atlas(&problem, a.grid)?)
    } else {
        None
    };
    let opts = SimOptions {
        max_steps: a.max_steps,
        ..SimOptions::default()
    };
    let cmp = compare_strategies(&problem, &strategies, a.n, a.seed, atlas, opts)?;
    let records: Vec<BatchRecord> = cmp
        .stats
        .iter()
        .filter(|s| strategies.contains(&s.strategy))
        .map(BatchRecord::from)
        .collect();

    print!("{}", cmp.table());
    if let Some((saved, rel)) = cmp.qp_savings(Strategy::SinglePolytope, Strategy::CandidateFamily) {
        println!("proposed vs jost: {saved} QPs saved ({:.1}%)", 100.0 * rel);
    }
    println!(
        "max deviation from the every-step QP: state {:.2e}, input {:.2e}",
        cmp.max_state_deviation, cmp.max_input_deviation
    );

    let json = to_json(&records)?;
    match &a.out {
        Some(path) => {
            write(path, &json)?;
            let mut manifest = RunManifest::new(&a.config, "batch", argv);
            manifest.seed = Some(a.seed);
            manifest.strategy = Some(
                strategies
                    .iter()
                    .map(|s| s.name())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            manifest.outputs.push(path.clone());
            manifest.write_beside_outputs().map_err(|e| io_err(path, e))?;
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn runtime(threads: Option<usize>) -> Result<tokio::runtime::Runtime, CliError> {
    let mut b = tokio::runtime::Builder::new_multi_thread();
    if let Some(t) = threads {
        b.worker_threads(t);
    }
    b.enable_all()
        .build()
        .map_err(|e| CliError::Run(format!("cannot start the runtime: {e}")))
}

pub fn netsim(a: &NetsimArgs, argv: &[String], threads: Option<usize>) -> Result<(), CliError> {
    if a.l.is_empty() || a.l.contains(&0) {
        return Err(CliError::Usage("--l values must be at least 1".into()));
    }
    if a.remote.is_some() && a.l.len() != 1 {
        return Err(CliError::Usage("--remote takes exactly one --l value".into()));
    }
    let problem = Arc::new(load_problem(&a.config)?);
    let x0s = sample_initial_states(&problem, a.n, a.seed)?;
    let opts = SessionOptions {
        max_steps: a.max_steps,
        workers: threads.unwrap_or(SessionOptions::default().workers),
        ..SessionOptions::default()
    };
    let rt = runtime(threads)?;
    let reports = rt.block_on(async {
        let stats = |runs: Vec<(SessionStats, ClosedLoopTrace)>| -> Vec<SessionStats> {
            runs.into_iter().map(|(s, _)| s).collect()
        };
        let base = CentralNode::new(problem.clone(), CentralConfig::baseline());
        let baseline = stats(
            run_sessions(problem.clone(), &Transport::InProcess(base), &x0s, opts).await?,
        );
        let mut reports = Vec::new();
        for &l in &a.l {
            let transport = match a.remote {
                Some(addr) => Transport::Tcp(addr),
                None => Transport::InProcess(CentralNode::new(
                    problem.clone(),
                    CentralConfig::for_limit(l),
                )),
            };
            let runs = run_sessions(
                problem.clone(),
                &transport,
                &x0s,
                SessionOptions { l_limit: l, ..opts },
            )
            .await?;
            reports.push(NetsimReport::new(a.seed, l, &stats(runs), &baseline));
        }
        Ok::<_, CliError>(reports)
    })?;

    println!("{:>5} {:>10} {:>10} {:>10}", "l", "requests", "baseline", "reduction");
    for r in &reports {
        println!(
            "{:>5} {:>10} {:>10} {:>9.1}%",
            r.l,
            r.requests,
            r.baseline_requests,
            100.0 * r.reduction
        );
    }
    if let Some(path) = &a.out {
        write(path, &to_json(&reports)?)?;
        let mut manifest = RunManifest::new(&a.config, "netsim", argv);
        manifest.seed = Some(a.seed);
        manifest.outputs.push(path.clone());
        manifest.write_beside_outputs().map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn atlas(a: &AtlasArgs, argv: &[String]) -> Result<(), CliError> {
    let problem = load_problem(&a.config)?;
    let atlas = build_atlas(&problem, a.grid)?;
    write(&a.out, &to_json(&atlas.export())?)?;
    let mut manifest = RunManifest::new(&a.config, "atlas", argv);
    manifest.outputs.push(a.out.clone());
    manifest.write_beside_outputs().map_err(|e| io_err(&a.out, e))?;
    println!("{} active sets in {} groups", atlas.len(), atlas.groups().len());
    for (stage, members) in atlas.groups() {
        println!("  stage {stage}: {}", members.len());
    }
    Ok(())
}

pub fn serve(a: &ServeArgs, threads: Option<usize>) -> Result<(), CliError> {
    if a.l == 0 {
        return Err(CliError::Usage("--l must be at least 1".into()));
    }
    let problem = Arc::new(load_problem(&a.config)?);
    let rt = runtime(threads)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.bind)
            .await
            .map_err(|e| CliError::Io(format!("{}: {e}", a.bind)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
        println!("listening on {addr}");
        use std::io::Write;
        let _ = std::io::stdout().flush();
        let node = CentralNode::new(problem, CentralConfig::for_limit(a.l));
        let (tx, rx) = tokio::sync::watch::channel(false);
        let server = tokio::spawn(async move { node.serve_tcp(listener, rx).await });
        tokio::signal::ctrl_c()
            .await
            .map_err(|e| CliError::Io(e.to_string()))?;
        let _ = tx.send(true);
        server
            .await
            .map_err(|e| CliError::Run(e.to_string()))?
            .map_err(|e| CliError::Io(e.to_string()))
    })
}


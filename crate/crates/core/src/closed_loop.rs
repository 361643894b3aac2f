//! Closed-loop simulation under the four reuse strategies and the batch
//! statistics built on it.
//!
//! A trajectory stops as soon as the state enters the terminal set; from then
//! on the unconstrained LQR law applies and no step is counted.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::active_set::ActiveSet;
use crate::atlas::{bounding_box, ActiveSetAtlas};
use crate::common_law::{
    self, build_reuse_region_with, criterion_applies, reuse_region_from_sets, simplified_feedback,
    stage_subset, CommonLawError, FamilyOptions, ReuseRegion,
};
use crate::polytope::HPolytope;
use crate::problem::MpcProblem;
use crate::qp::{solve_qp, QpError};
use crate::regional::{self, FeedbackLaw, RegionalLaw};

pub const DEFAULT_MAX_STEPS: usize = 1000;
/// Rejection-sampling budget per initial state.
const MAX_SAMPLE_ATTEMPTS: usize = 1_000_000;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("infeasible initial state")]
    InfeasibleInitialState,
    #[error("QP failed at step {step}: {source}")]
    Qp { step: usize, source: QpError },
    #[error("terminal set not reached within {0} steps")]
    MaxIterations(usize),
    #[error("the gamma strategy needs an active-set atlas")]
    MissingAtlas,
    #[error("no feasible initial state found after {0} draws")]
    Sampling(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Solve a QP at every step.
    EveryStepQp,
    /// Reuse the full-horizon law on its own polytope only.
    SinglePolytope,
    /// Reuse the stage-determined law on the candidate family.
    CandidateFamily,
    /// Reuse the stage-determined law on every known polytope of its group.
    GammaOracle,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::EveryStepQp,
        Strategy::SinglePolytope,
        Strategy::CandidateFamily,
        Strategy::GammaOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::EveryStepQp => "qp",
            Strategy::SinglePolytope => "jost",
            Strategy::CandidateFamily => "proposed",
            Strategy::GammaOracle => "gamma",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qp" | "every" | "every-step" => Ok(Strategy::EveryStepQp),
            "jost" | "single" | "single-polytope" => Ok(Strategy::SinglePolytope),
            "proposed" | "family" | "candidate-family" => Ok(Strategy::CandidateFamily),
            "gamma" | "oracle" => Ok(Strategy::GammaOracle),
            other => Err(format!(
                "unknown strategy `{other}` (expected qp, jost, proposed or gamma)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub max_steps: usize,
    pub family: FamilyOptions,
    /// Keep every polytope built during the run in the trace.
    pub record_regions: bool,
    /// Count the step at which the state enters `T` as one QP step: a
    /// controller without a membership test for `T` learns that it has
    /// arrived from the empty active set of the QP solved there.
    pub count_entry_step: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            max_steps: DEFAULT_MAX_STEPS,
            family: FamilyOptions::default(),
            record_regions: false,
            count_entry_step: true,
        }
    }
}

/// A polytope built at a QP step, kept for plotting.
#[derive(Debug, Clone, Serialize)]
pub struct BuiltRegion {
    pub step: usize,
    pub set: ActiveSet,
    pub polytope: HPolytope,
}

#[derive(Debug, Clone, Default)]
pub struct ClosedLoopTrace {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// 1 where a QP was solved.
    pub e: Vec<u8>,
    /// Active set of each QP solve, `None` on reuse steps.
    pub solved_sets: Vec<Option<ActiveSet>>,
    pub entered_terminal_at: Option<usize>,
    /// Entering `T` after at least one step was counted as a QP step.
    pub entry_qp: bool,
    pub qp_count: usize,
    pub regions: Vec<BuiltRegion>,
}

impl ClosedLoopTrace {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// Steps that enter the reuse statistics, including a counted entry step.
    pub fn counted_steps(&self) -> usize {
        self.steps() + usize::from(self.entry_qp)
    }

    /// QPs that enter the reuse statistics.
    pub fn counted_qps(&self) -> usize {
        self.qp_count + usize::from(self.entry_qp)
    }

    /// CSV with header `k,x1..xn,u1..um,e`. The final state, reached without
    /// an input, gets empty input and indicator cells.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut out = String::from("k");
        for i in 1..=n {
            out.push_str(&format!(",x{i}"));
        }
        for j in 1..=m {
            out.push_str(&format!(",u{j}"));
        }
        out.push_str(",e\n");
        for (k, x) in self.states.iter().enumerate() {
            out.push_str(&k.to_string());
            for v in x.iter() {
                out.push_str(&format!(",{v}"));
            }
            match self.inputs.get(k) {
                Some(u) => {
                    for v in u.iter() {
                        out.push_str(&format!(",{v}"));
                    }
                    out.push_str(&format!(",{}\n", self.e[k]));
                }
                None => {
                    out.push_str(&",".repeat(m));
                    out.push_str(",\n");
                }
            }
        }
        out
    }
}

/// What the controller may reuse until the next QP.
enum Reuse {
    None,
    Single(FeedbackLaw, HPolytope),
    Family(ReuseRegion),
    Gamma {
        law: FeedbackLaw,
        stage: ActiveSet,
        own: HPolytope,
    },
}

impl Reuse {
    fn query(&self, x: &DVector<f64>, atlas: Option<&ActiveSetAtlas>) -> Option<DVector<f64>> {
        match self {
            Reuse::None => None,
            Reuse::Single(law, region) => region.contains(x).then(|| law.eval(x)),
            Reuse::Family(rr) => common_law::reuse_query(rr, x),
            Reuse::Gamma { law, stage, own } => {
                let hit = own.contains(x)
                    || atlas.is_some_and(|a| {
                        a.group(stage)
                            .iter()
                            .filter_map(|s| a.region(s))
                            .any(|p| p.contains(x))
                    });
                hit.then(|| law.eval(x))
            }
        }
    }

    fn regions(&self, step: usize) -> Vec<BuiltRegion> {
        match self {
            Reuse::None | Reuse::Gamma { .. } => Vec::new(),
            Reuse::Single(_, region) => vec![BuiltRegion {
                step,
                set: ActiveSet::empty(),
                polytope: region.clone(),
            }],
            Reuse::Family(rr) => rr
                .candidates
                .iter()
                .map(|c| BuiltRegion {
                    step,
                    set: c.set.clone(),
                    polytope: c.region.clone(),
                })
                .collect(),
        }
    }
}

/// Runs closed-loop trajectories of one problem.
pub struct Simulator<'a> {
    pub problem: &'a MpcProblem,
    pub atlas: Option<&'a ActiveSetAtlas>,
    pub opts: SimOptions,
}

impl<'a> Simulator<'a> {
    pub fn new(problem: &'a MpcProblem) -> Self {
        Simulator {
            problem,
            atlas: None,
            opts: SimOptions::default(),
        }
    }

    pub fn with_atlas(mut self, atlas: &'a ActiveSetAtlas) -> Self {
        self.atlas = Some(atlas);
        self
    }

    pub fn with_options(mut self, opts: SimOptions) -> Self {
        self.opts = opts;
        self
    }

    fn single(&self, active: &ActiveSet) -> Reuse {
        match RegionalLaw::build(&self.problem.qp, active) {
            Ok(rl) => Reuse::Single(rl.feedback, rl.region),
            Err(_) => Reuse::None,
        }
    }

    fn reuse_after_solve(&self, strategy: Strategy, active: &ActiveSet) -> Reuse {
        let qp = &self.problem.qp;
        match strategy {
            Strategy::EveryStepQp => Reuse::None,
            Strategy::SinglePolytope => self.single(active),
            _ if !criterion_applies(qp, active) => self.single(active),
            Strategy::CandidateFamily => {
                match build_reuse_region_with(qp, active, &self.opts.family) {
                    Ok(rr) => Reuse::Family(rr),
                    Err(CommonLawError::FamilyTooLarge { .. }) => {
                        reuse_region_from_sets(qp, active, std::slice::from_ref(active), false)
                            .map_or(Reuse::None, Reuse::Family)
                    }
                    Err(_) => Reuse::None,
                }
            }
            Strategy::GammaOracle => {
                let stage = stage_subset(active, qp.dims.q_stage);
                match (
                    simplified_feedback(qp, &stage),
                    regional::polytope_from_active_set(qp, active),
                ) {
                    (Ok(law), Ok(own)) => Reuse::Gamma { law, stage, own },
                    _ => Reuse::None,
                }
            }
        }
    }

    pub fn simulate(
        &self,
        strategy: Strategy,
        x0: &DVector<f64>,
    ) -> Result<ClosedLoopTrace, SimError> {
        if strategy == Strategy::GammaOracle && self.atlas.is_none() {
            return Err(SimError::MissingAtlas);
        }
        let qp = &self.problem.qp;
        let sys = &self.problem.spec.sys;
        let m = sys.m();
        let mut trace = ClosedLoopTrace {
            states: vec![x0.clone()],
            ..Default::default()
        };
        let mut reuse = Reuse::None;
        for k in 0..self.opts.max_steps {
            let x = trace.states[k].clone();
            if self.problem.terminal_set.contains(&x) {
                trace.entered_terminal_at = Some(k);
                trace.entry_qp = self.opts.count_entry_step && k > 0;
                return Ok(trace);
            }
            let u = match reuse.query(&x, self.atlas) {
                Some(u) => {
                    trace.e.push(0);
                    trace.solved_sets.push(None);
                    u
                }
                None => {
                    let sol = solve_qp(qp, &x).map_err(|source| match (k, &source) {
                        (0, QpError::Infeasible) => SimError::InfeasibleInitialState,
                        _ => SimError::Qp { step: k, source },
                    })?;
                    trace.e.push(1);
                    trace.qp_count += 1;
                    reuse = self.reuse_after_solve(strategy, &sol.active);
                    if self.opts.record_regions {
                        trace.regions.extend(reuse.regions(k));
                        if let Some(last) = trace.regions.last_mut() {
                            if last.set.is_empty() {
                                last.set = sol.active.clone();
                            }
                        }
                    }
                    trace.solved_sets.push(Some(sol.active.clone()));
                    sol.first_input(m)
                }
            };
            trace.states.push(sys.step(&x, &u));
            trace.inputs.push(u);
        }
        let last = trace.states.last().expect("trace has a state");
        if self.problem.terminal_set.contains(last) {
            trace.entered_terminal_at = Some(trace.inputs.len());
            trace.entry_qp = self.opts.count_entry_step;
            return Ok(trace);
        }
        Err(SimError::MaxIterations(self.opts.max_steps))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    pub strategy: Strategy,
    pub n: usize,
    pub seed: u64,
    /// Fraction of counted steps without a QP solve.
    pub reuse_pct: f64,
    pub total_qps: usize,
    pub total_steps: usize,
    pub mean_steps: f64,
}

impl BatchStats {
    pub fn from_traces(strategy: Strategy, seed: u64, traces: &[ClosedLoopTrace]) -> Self {
        let total_steps: usize = traces.iter().map(|t| t.counted_steps()).sum();
        let total_qps: usize = traces.iter().map(|t| t.counted_qps()).sum();
        BatchStats {
            strategy,
            n: traces.len(),
            seed,
            reuse_pct: if total_steps == 0 {
                0.0
            } else {
                (total_steps - total_qps) as f64 / total_steps as f64
            },
            total_qps,
            total_steps,
            mean_steps: total_steps as f64 / traces.len().max(1) as f64,
        }
    }
}

/// Draws `n` initial states uniformly from the bounding box of `X`, rejecting
/// states with an infeasible QP and states already in the terminal set. State
/// `i` comes from its own ChaCha stream, so the sample is independent of
/// scheduling.
pub fn sample_initial_states(
    problem: &MpcProblem,
    n: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>, SimError> {
    let (lo, hi) = bounding_box(&problem.spec.x_set).ok_or(SimError::Sampling(0))?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for _ in 0..MAX_SAMPLE_ATTEMPTS {
                let x = DVector::from_fn(lo.len(), |j, _| rng.random_range(lo[j]..=hi[j]));
                if problem.terminal_set.contains(&x) || !problem.spec.x_set.contains(&x) {
                    continue;
                }
                if solve_qp(&problem.qp, &x).is_ok() {
                    return Ok(x);
                }
            }
            Err(SimError::Sampling(MAX_SAMPLE_ATTEMPTS))
        })
        .collect()
}

/// Simulates every initial state under one strategy.
pub fn run_batch(
    sim: &Simulator<'_>,
    strategy: Strategy,
    x0s: &[DVector<f64>],
) -> Result<Vec<ClosedLoopTrace>, SimError> {
    x0s.par_iter().map(|x0| sim.simulate(strategy, x0)).collect()
}

pub fn batch(
    sim: &Simulator<'_>,
    strategy: Strategy,
    n: usize,
    seed: u64,
) -> Result<BatchStats, SimError> {
    let x0s = sample_initial_states(sim.problem, n, seed)?;
    Ok(BatchStats::from_traces(strategy, seed, &run_batch(sim, strategy, &x0s)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub n: usize,
    pub seed: u64,
    pub stats: Vec<BatchStats>,
    /// Largest state deviation from the every-step-QP trajectory, over all
    /// strategies and trajectories.
    pub max_state_deviation: f64,
    pub max_input_deviation: f64,
    /// Trajectories whose lengths differ from the reference.
    pub length_mismatches: usize,
    /// Active sets added to the atlas from reference trajectories.
    pub atlas_sets_added: usize,
}

impl Comparison {
    pub fn get(&self, strategy: Strategy) -> Option<&BatchStats> {
        self.stats.iter().find(|s| s.strategy == strategy)
    }

    /// QPs saved by `better` relative to `baseline`: absolute and relative to the baseline.
    pub fn qp_savings(&self, baseline: Strategy, better: Strategy) -> Option<(i64, f64)> {
        let (b, o) = (self.get(baseline)?, self.get(better)?);
        let saved = b.total_qps as i64 - o.total_qps as i64;
        Some((saved, saved as f64 / b.total_qps.max(1) as f64))
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>10} {:>10} {:>10} {:>10}\n",
            "strategy", "reuse", "QPs", "steps", "mean len"
        );
        for s in &self.stats {
            out.push_str(&format!(
                "{:<10} {:>9.1}% {:>10} {:>10} {:>10.2}\n",
                s.strategy.name(),
                100.0 * s.reuse_pct,
                s.total_qps,
                s.total_steps,
                s.mean_steps
            ));
        }
        out
    }
}

/// Runs every requested strategy on the same initial-state sample.
///
/// The every-step-QP reference always runs; it anchors the deviation checks.
/// When the gamma strategy is requested, the active sets met along the
/// reference trajectories are added to the atlas first, so that every set the
/// closed loop actually visits is known to the oracle.
pub fn compare_strategies(
    problem: &MpcProblem,
    strategies: &[Strategy],
    n: usize,
    seed: u64,
    atlas: Option<ActiveSetAtlas>,
    opts: SimOptions,
) -> Result<Comparison, SimError> {
    if strategies.contains(&Strategy::GammaOracle) && atlas.is_none() {
        return Err(SimError::MissingAtlas);
    }
    let x0s = sample_initial_states(problem, n, seed)?;
    let base = Simulator::new(problem).with_options(opts);
    let reference = run_batch(&base, Strategy::EveryStepQp, &x0s)?;

    let mut atlas = atlas;
    let mut atlas_sets_added = 0;
    if let Some(a) = atlas.as_mut() {
        let visited: Vec<DVector<f64>> = reference
            .iter()
            .flat_map(|t| t.states[..t.steps()].iter().cloned())
            .collect();
        atlas_sets_added = a.absorb_states(&problem.qp, &visited);
    }

    let mut stats = Vec::new();
    let mut max_state_deviation: f64 = 0.0;
    let mut max_input_deviation: f64 = 0.0;
    let mut length_mismatches = 0;
    let mut order: Vec<Strategy> = strategies.to_vec();
    order.sort();
    order.dedup();
    for strategy in order {
        let traces = if strategy == Strategy::EveryStepQp {
            reference.clone()
        } else {
            let sim = Simulator {
                problem,
                atlas: atlas.as_ref(),
                opts,
            };
            run_batch(&sim, strategy, &x0s)?
        };
        for (t, r) in traces.iter().zip(&reference) {
            if t.steps() != r.steps() {
                length_mismatches += 1;
            }
            for (a, b) in t.states.iter().zip(&r.states) {
                max_state_deviation = max_state_deviation.max((a - b).amax());
            }
            for (a, b) in t.inputs.iter().zip(&r.inputs) {
                max_input_deviation = max_input_deviation.max((a - b).amax());
            }
        }
        stats.push(BatchStats::from_traces(strategy, seed, &traces));
    }
    Ok(Comparison {
        n,
        seed,
        stats,
        max_state_deviation,
        max_input_deviation,
        length_mismatches,
        atlas_sets_added,
    })
}

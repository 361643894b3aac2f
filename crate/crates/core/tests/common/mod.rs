#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::OnceLock;

use mpc_reuse_core::atlas::{bounding_box, enumerate_by_grid, ActiveSetAtlas};
use mpc_reuse_core::model::parse_config;
use mpc_reuse_core::qp::solve_qp;
use mpc_reuse_core::{ActiveSet, MpcProblem};
use nalgebra::DVector;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EXAMPLE1: &str = include_str!("../../../../configs/example1.json");
pub const PENDULUM: &str = include_str!("../../../../configs/pendulum.json");

pub fn example1() -> &'static MpcProblem {
    static P: OnceLock<MpcProblem> = OnceLock::new();
    P.get_or_init(|| MpcProblem::build(parse_config(EXAMPLE1).unwrap()).unwrap())
}

pub fn pendulum() -> &'static MpcProblem {
    static P: OnceLock<MpcProblem> = OnceLock::new();
    P.get_or_init(|| MpcProblem::build(parse_config(PENDULUM).unwrap()).unwrap())
}

pub fn example1_atlas(pts: usize) -> ActiveSetAtlas {
    let p = example1();
    enumerate_by_grid(&p.qp, &p.spec.x_set, pts).unwrap()
}

pub fn example1_atlas_201() -> &'static ActiveSetAtlas {
    static A: OnceLock<ActiveSetAtlas> = OnceLock::new();
    A.get_or_init(|| example1_atlas(201))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw over the bounding box of `X`.
pub fn box_point<R: Rng>(p: &MpcProblem, rng: &mut R) -> DVector<f64> {
    let (lo, hi) = bounding_box(&p.spec.x_set).unwrap();
    DVector::from_fn(p.n(), |i, _| rng.random_range(lo[i]..=hi[i]))
}

/// `count` states with a feasible QP.
pub fn feasible_states(p: &MpcProblem, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = box_point(p, &mut rng);
        if solve_qp(&p.qp, &x).is_ok() {
            out.push(x);
        }
    }
    out
}

/// Distinct active sets met at random feasible states, in first-seen order.
pub fn harvest_active_sets(p: &MpcProblem, count: usize, seed: u64) -> Vec<ActiveSet> {
    let mut rng = rng(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..200_000 {
        if out.len() == count {
            break;
        }
        let x = box_point(p, &mut rng);
        if let Ok(sol) = solve_qp(&p.qp, &x) {
            if seen.insert(sol.active.clone()) {
                out.push(sol.active);
            }
        }
    }
    out
}

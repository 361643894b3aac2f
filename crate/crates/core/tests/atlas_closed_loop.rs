mod common;

use mpc_reuse_core::atlas::{enumerate_by_grid, grid_points};
use mpc_reuse_core::closed_loop::{
    compare_strategies, sample_initial_states, SimOptions, Simulator, Strategy,
};
use mpc_reuse_core::common_law::{criterion_applies, simplified_feedback};
use mpc_reuse_core::qp::solve_qp;
use mpc_reuse_core::ActiveSet;
use nalgebra::DVector;

use common::*;

#[test]
fn saturated_groups_hold_about_26_polytopes() {
    let atlas = example1_atlas_201();
    for stage in [&[1usize][..], &[2]] {
        let stage = ActiveSet::from_one_based(stage);
        let n = atlas.group(&stage).len();
        assert!((22..=30).contains(&n), "group {stage} has {n} members");
        let gamma = atlas.gamma_of(&atlas.group(&stage)[0]);
        assert_eq!(gamma.len(), n);
    }
}

#[test]
fn coarser_grid_is_a_subset() {
    let coarse = example1_atlas(101);
    let fine = example1_atlas_201();
    for s in coarse.sets() {
        assert!(fine.contains(s), "{s} missing from the finer grid");
    }
}

#[test]
fn grid_inside_terminal_set_only_finds_the_empty_set() {
    let p = example1();
    let atlas = enumerate_by_grid(&p.qp, &p.terminal_set, 21).unwrap();
    assert_eq!(atlas.sets().cloned().collect::<Vec<_>>(), vec![ActiveSet::empty()]);
    assert!(!grid_points(&p.terminal_set, 21).unwrap().is_empty());
}

#[test]
fn group_laws_match_the_qp() {
    let p = example1();
    let atlas = example1_atlas_201();
    let mut rng = rng(201);
    for (stage, members) in atlas.groups() {
        if stage.len() != p.m() {
            continue;
        }
        let law = simplified_feedback(&p.qp, stage).unwrap();
        for s in members {
            let Some(region) = atlas.region(s) else {
                continue;
            };
            if !criterion_applies(&p.qp, s) {
                continue;
            }
            for x in region.interior_samples(10, &mut rng) {
                let u = solve_qp(&p.qp, &x).unwrap().first_input(1);
                assert!((law.eval(&x) - u).amax() <= 1e-6, "{s} at {x}");
            }
        }
    }
}

#[test]
fn strategies_agree_and_are_ordered() {
    for (p, atlas) in [
        (example1(), example1_atlas(101)),
        (pendulum(), enumerate_by_grid(&pendulum().qp, &pendulum().spec.x_set, 7).unwrap()),
    ] {
        let c = compare_strategies(p, &Strategy::ALL, 150, 9, Some(atlas), SimOptions::default())
            .unwrap();
        assert!(c.max_state_deviation <= 1e-6);
        assert!(c.max_input_deviation <= 1e-6);
        assert_eq!(c.length_mismatches, 0);
        let r = |s| c.get(s).unwrap().reuse_pct;
        assert_eq!(r(Strategy::EveryStepQp), 0.0);
        assert!(r(Strategy::SinglePolytope) <= r(Strategy::CandidateFamily));
        assert!(r(Strategy::CandidateFamily) <= r(Strategy::GammaOracle));
    }
}

#[test]
fn trajectories_respect_constraints() {
    let p = pendulum();
    let sim = Simulator::new(p);
    for x0 in sample_initial_states(p, 50, 3).unwrap() {
        let t = sim.simulate(Strategy::CandidateFamily, &x0).unwrap();
        assert_eq!(t.inputs.len(), t.states.len() - 1);
        assert_eq!(t.e.len(), t.inputs.len());
        assert_eq!(t.qp_count, t.e.iter().map(|&e| e as usize).sum::<usize>());
        assert_eq!(t.e[0], 1);
        assert!(p.terminal_set.contains(t.states.last().unwrap()));
        for (x, u) in t.states.iter().zip(&t.inputs) {
            assert!(p.spec.x_set.contains_tol(x, 1e-7));
            assert!(p.spec.u_set.contains_tol(u, 1e-7));
        }
    }
}

#[test]
fn start_inside_terminal_set_takes_no_steps() {
    let p = example1();
    let t = Simulator::new(p)
        .simulate(Strategy::CandidateFamily, &DVector::zeros(2))
        .unwrap();
    assert_eq!(t.steps(), 0);
    assert_eq!(t.qp_count, 0);
    assert_eq!(t.counted_steps(), 0);
    assert_eq!(t.entered_terminal_at, Some(0));
}

#[test]
fn batches_are_reproducible() {
    let p = example1();
    let a = sample_initial_states(p, 40, 17).unwrap();
    let b = sample_initial_states(p, 40, 17).unwrap();
    assert_eq!(a, b);
    for x in &a {
        assert!(!p.terminal_set.contains(x));
    }
    let one = compare_strategies(p, &[Strategy::CandidateFamily], 40, 17, None, SimOptions::default())
        .unwrap();
    let two = compare_strategies(p, &[Strategy::CandidateFamily], 40, 17, None, SimOptions::default())
        .unwrap();
    assert_eq!(one.stats, two.stats);
}

#[test]
fn gamma_needs_an_atlas() {
    let p = example1();
    let r = Simulator::new(p).simulate(Strategy::GammaOracle, &DVector::from_row_slice(&[1.0, 1.0]));
    assert!(r.is_err());
}

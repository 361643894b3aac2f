use std::sync::Arc;

use mpc_reuse_core::closed_loop::{sample_initial_states, SimOptions, Simulator, Strategy};
use mpc_reuse_core::common_law::FamilyOptions;
use mpc_reuse_core::model::parse_config;
use mpc_reuse_core::{ActiveSet, MpcProblem};
use mpc_reuse_netsim::experiment::LoopbackServer;
use mpc_reuse_netsim::wire::{
    decode_active_set, encode_active_set, read_frame, write_frame, ErrorCode,
};
use mpc_reuse_netsim::{
    run_sessions, CentralConfig, CentralNode, Frame, SessionOptions, Transport,
};
use nalgebra::DVector;
use proptest::prelude::*;
use tokio::io::{duplex, AsyncWriteExt};

fn example1() -> Arc<MpcProblem> {
    let spec = parse_config(include_str!("../../../configs/example1.json")).unwrap();
    Arc::new(MpcProblem::build(spec).unwrap())
}

fn pendulum() -> Arc<MpcProblem> {
    let spec = parse_config(include_str!("../../../configs/pendulum.json")).unwrap();
    Arc::new(MpcProblem::build(spec).unwrap())
}

proptest! {
    #[test]
    fn codec_round_trip(q in prop::sample::select(vec![8usize, 32, 138]), seed in any::<u64>()) {
        let idx: Vec<usize> = (0..q).filter(|i| (seed.rotate_left(*i as u32 % 64) ^ (*i as u64 * 0x9E37)) & 3 == 0).collect();
        let set = ActiveSet::from_indices(idx);
        let bits = encode_active_set(&set, q).unwrap();
        prop_assert_eq!(bits.len(), q.div_ceil(8));
        prop_assert_eq!(decode_active_set(&bits, q).unwrap(), set.clone());
        let frame = Frame::Response { criterion: seed & 1 == 1, q, sets: vec![set.clone(), ActiveSet::empty()] };
        let bytes = frame.encode().unwrap();
        prop_assert_eq!(Frame::decode(&bytes).unwrap(), Some((frame, bytes.len())));
    }

    #[test]
    fn superset_value_is_larger(idx in prop::collection::btree_set(0usize..138, 0..20), extra in 0usize..138) {
        let a = ActiveSet::from_indices(idx.into_iter().collect());
        let b = a.union(&ActiveSet::from_indices(vec![extra]));
        prop_assert!(a.cmp_binary_value(&b) != std::cmp::Ordering::Greater);
    }

    #[test]
    fn request_round_trip(state in prop::collection::vec(-1e6f64..1e6, 0..12)) {
        let frame = Frame::Request { state };
        let bytes = frame.encode().unwrap();
        prop_assert_eq!(Frame::decode(&bytes).unwrap(), Some((frame, bytes.len())));
    }
}

fn saturated_state(p: &MpcProblem) -> DVector<f64> {
    let set = ActiveSet::from_one_based(&[1, 7, 13]);
    let region = mpc_reuse_core::regional::polytope_from_active_set(&p.qp, &set).unwrap();
    region.chebyshev_center(10.0).unwrap().0
}

#[test]
fn central_answers() {
    let p = example1();
    let x = saturated_state(&p);
    let node = CentralNode::new(p.clone(), CentralConfig::new(50));
    let Frame::Response { criterion, q, sets } = node.handle_request(x.as_slice()) else {
        panic!("expected a response");
    };
    assert!(criterion);
    assert_eq!(q, 32);
    let expect: Vec<ActiveSet> = [&[1, 7, 13][..], &[1, 13], &[1, 7], &[1]]
        .iter()
        .map(|s| ActiveSet::from_one_based(s))
        .collect();
    assert_eq!(sets, expect);

    let one = CentralNode::new(p.clone(), CentralConfig::new(1));
    let Frame::Response { sets, .. } = one.handle_request(x.as_slice()) else {
        panic!("expected a response");
    };
    assert_eq!(sets, vec![ActiveSet::from_one_based(&[1, 7, 13])]);

    let base = CentralNode::new(p.clone(), CentralConfig::baseline());
    assert!(matches!(
        base.handle_request(x.as_slice()),
        Frame::Response { criterion: false, .. }
    ));

    assert_eq!(node.handle_request(&[2.9, 2.9]), Frame::Error(ErrorCode::Infeasible));
    assert_eq!(node.handle_request(&[0.0]), Frame::Error(ErrorCode::Malformed));
    assert_eq!(node.handle_request(&[f64::NAN, 0.0]), Frame::Error(ErrorCode::Malformed));
}

#[tokio::test]
async fn malformed_frames_get_error_frames() {
    let node = CentralNode::new(example1(), CentralConfig::new(5));
    let (mut near, mut far) = duplex(1024);
    let server = tokio::spawn(async move { node.serve_stream(&mut far).await });

    write_frame(&mut near, &Frame::Request { state: vec![1.0] }).await.unwrap();
    assert_eq!(read_frame(&mut near).await.unwrap(), Some(Frame::Error(ErrorCode::Malformed)));
    write_frame(&mut near, &Frame::Error(ErrorCode::Infeasible)).await.unwrap();
    assert_eq!(read_frame(&mut near).await.unwrap(), Some(Frame::Error(ErrorCode::Malformed)));
    write_frame(&mut near, &Frame::Request { state: vec![0.0, 0.0] }).await.unwrap();
    assert!(matches!(read_frame(&mut near).await.unwrap(), Some(Frame::Response { .. })));

    near.write_all(&[0x00, 0x01]).await.unwrap();
    assert_eq!(read_frame(&mut near).await.unwrap(), Some(Frame::Error(ErrorCode::Malformed)));
    assert!(server.await.unwrap().is_err());
}

fn in_process_reference(
    p: &MpcProblem,
    x0s: &[DVector<f64>],
    l: usize,
) -> Vec<mpc_reuse_core::closed_loop::ClosedLoopTrace> {
    let opts = SimOptions {
        family: FamilyOptions {
            prune_empty: false,
            max_sets: Some(l),
            ..FamilyOptions::default()
        },
        ..SimOptions::default()
    };
    let sim = Simulator::new(p).with_options(opts);
    x0s.iter()
        .map(|x| sim.simulate(Strategy::CandidateFamily, x).unwrap())
        .collect()
}

fn assert_same(
    wire: &[(mpc_reuse_netsim::SessionStats, mpc_reuse_core::closed_loop::ClosedLoopTrace)],
    reference: &[mpc_reuse_core::closed_loop::ClosedLoopTrace],
) {
    for ((stats, t), r) in wire.iter().zip(reference) {
        assert_eq!(t.states.len(), r.states.len());
        assert_eq!(t.e, r.e);
        assert_eq!(stats.requests, r.counted_qps());
        assert_eq!(stats.steps, r.counted_steps());
        for (a, b) in t.states.iter().zip(&r.states) {
            assert!((a - b).amax() <= 1e-9);
        }
        for (a, b) in t.inputs.iter().zip(&r.inputs) {
            assert!((a - b).amax() <= 1e-9);
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn wire_sessions_match_in_process_runs() {
    for p in [example1(), pendulum()] {
        let x0s = sample_initial_states(&p, 40, 77).unwrap();
        for l in [1, 5, 50] {
            let reference = in_process_reference(&p, &x0s, l);
            let node = CentralNode::new(p.clone(), CentralConfig::new(l));
            let opts = SessionOptions {
                l_limit: l,
                ..SessionOptions::default()
            };
            let piped = run_sessions(p.clone(), &Transport::InProcess(node.clone()), &x0s, opts)
                .await
                .unwrap();
            assert_same(&piped, &reference);

            let server = LoopbackServer::start(node).await.unwrap();
            let tcp = run_sessions(p.clone(), &Transport::Tcp(server.addr), &x0s, opts)
                .await
                .unwrap();
            server.stop().await.unwrap();
            assert_same(&tcp, &reference);
        }
    }
}

#[tokio::test]
async fn baseline_matches_single_polytope() {
    let p = example1();
    let x0s = sample_initial_states(&p, 40, 78).unwrap();
    let node = CentralNode::new(p.clone(), CentralConfig::baseline());
    let runs = run_sessions(p.clone(), &Transport::InProcess(node), &x0s, SessionOptions::default())
        .await
        .unwrap();
    let sim = Simulator::new(&p);
    for ((stats, _), x0) in runs.iter().zip(&x0s) {
        let r = sim.simulate(Strategy::SinglePolytope, x0).unwrap();
        assert_eq!(stats.requests, r.counted_qps());
    }
}

#[tokio::test]
async fn sessions_are_reproducible() {
    let p = pendulum();
    let x0s = sample_initial_states(&p, 30, 79).unwrap();
    let node = CentralNode::new(p.clone(), CentralConfig::new(10));
    let t = Transport::InProcess(node);
    let a = run_sessions(p.clone(), &t, &x0s, SessionOptions::default()).await.unwrap();
    let b = run_sessions(
        p.clone(),
        &t,
        &x0s,
        SessionOptions {
            workers: 3,
            ..SessionOptions::default()
        },
    )
    .await
    .unwrap();
    for ((sa, ta), (sb, tb)) in a.iter().zip(&b) {
        assert_eq!(sa, sb);
        assert_eq!(ta.states, tb.states);
        assert_eq!(ta.inputs, tb.inputs);
    }
}

#[tokio::test]
async fn infeasible_start_is_reported() {
    let p = example1();
    let node = CentralNode::new(p.clone(), CentralConfig::new(5));
    let r = run_sessions(
        p.clone(),
        &Transport::InProcess(node),
        &[DVector::from_row_slice(&[2.9, 2.9])],
        SessionOptions::default(),
    )
    .await;
    assert!(matches!(r, Err(mpc_reuse_netsim::LocalError::Infeasible)));
}

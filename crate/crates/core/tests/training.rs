//! The training loop: control flow, determinism, bound behaviour and the
//! closed-form Gamma shapes.

mod common;

use common::shapes::shape_mismatches;
use common::*;
use dualvb::inference::{self, compute_elbo, Observations};
use dualvb::state::{init_state, Hyperparams};
use dualvb::Error;
use proptest::prelude::*;

#[test]
fn infinite_tolerance_stops_at_the_first_check() {
    let ds = tiny_dataset(1, 30, &[4, 3], 2, 0.0);
    let hp = Hyperparams {
        s: 4,
        convergence_eps: f64::INFINITY,
        convergence_window: 7,
        ..Default::default()
    };
    let fit = inference::fit(&ds, &hp).unwrap();
    assert_eq!(fit.report.iterations, 7);
    assert!(fit.report.converged);
    assert_eq!(fit.trace.entries.len(), 8);
}

#[test]
fn max_iters_bounds_the_run() {
    let ds = tiny_dataset(1, 30, &[4, 3], 2, 0.0);
    let fit = inference::fit(&ds, &Hyperparams { s: 4, max_iters: 12, ..Default::default() }).unwrap();
    assert_eq!(fit.report.iterations, 12);
    assert!(!fit.report.converged);
}

#[test]
fn fixed_seed_gives_identical_traces() {
    let ds = tiny_dataset(2, 40, &[5, 3], 3, 0.1);
    let hp = Hyperparams { s: 6, max_iters: 60, seed: 9, ..Default::default() };
    let a = inference::fit(&ds, &hp).unwrap();
    let b = inference::fit(&ds, &hp).unwrap();
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    assert_eq!(a.state, b.state);
    let c = inference::fit(&ds, &Hyperparams { seed: 10, ..hp }).unwrap();
    assert_ne!(a.trace.values(), c.trace.values());
}

#[test]
fn identical_state_gives_identical_bound() {
    let ds = tiny_dataset(3, 20, &[3], 2, 0.2);
    let (st, obs) = warm_state(&ds, &tiny_hp(1, 1, 3), 5);
    assert_eq!(compute_elbo(&st, &obs).unwrap().to_bits(), compute_elbo(&st, &obs).unwrap().to_bits());
}

#[test]
fn first_sweep_strictly_increases_the_bound() {
    for seed in 0..20 {
        let ds = tiny_dataset(seed, 25, &[4, 2], 2, 0.0);
        let hp = tiny_hp(seed, 1, 4);
        let mut st = init_state(&ds, &hp).unwrap();
        let mut obs = Observations::new(&ds);
        let before = compute_elbo(&st, &obs).unwrap();
        inference::sweep(&mut st, &mut obs, &hp, 1).unwrap();
        assert!(compute_elbo(&st, &obs).unwrap() > before);
    }
}

#[test]
fn pruning_keeps_the_state_consistent_and_is_annotated() {
    let ds = tiny_dataset(4, 60, &[6, 4], 2, 0.1);
    let hp = Hyperparams { s: 10, max_iters: 2000, prune_rel_threshold: 0.05, ..Default::default() };
    let fit = inference::fit(&ds, &hp).unwrap();
    fit.state.check_dimensions().unwrap();
    assert!(fit.report.final_s < 10);
    assert_eq!(fit.state.active_s.len(), fit.state.s());
    let pruned: Vec<usize> = fit.trace.entries.iter().filter(|e| e.pruned).map(|e| e.iteration).collect();
    let events: Vec<usize> = fit.report.prune_events.iter().map(|e| e.iteration).collect();
    assert_eq!(pruned, events);
    assert!(events.iter().all(|i| i % hp.prune_every == 0));
    assert!(fit.trace.to_csv().starts_with("iteration,elbo,active_s,event\n0,"));
}

#[test]
fn non_finite_update_is_reported_with_its_factor() {
    let ds = tiny_dataset(5, 20, &[3, 3], 2, 0.0);
    let hp = tiny_hp(0, 1, 3);
    let mut st = init_state(&ds, &hp).unwrap();
    let mut obs = Observations::new(&ds);
    obs.views[1].working[(0, 0)] = f64::NAN;
    obs.views[1].gram = obs.views[1].working.tr_mul(&obs.views[1].working);
    match inference::sweep(&mut st, &mut obs, &hp, 3) {
        Err(Error::Numerical { term, message }) => {
            assert!(term.contains('W') || term.contains('Z'), "{term}");
            assert!(message.contains("sweep 3"), "{message}");
        }
        other => panic!("expected a numerical error, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gamma_shapes_follow_closed_forms(
        seed in 0u64..1000,
        n in 4usize..30,
        dims in prop::collection::vec(1usize..8, 1..4),
        c in 2usize..4,
        k in 1usize..3,
        s in 1usize..5,
        miss in prop_oneof![Just(0.0), Just(0.2)],
    ) {
        let bad = shape_mismatches(seed, n, &dims, c, k, s, miss);
        prop_assert!(bad.is_empty(), "{:?}", bad);
    }

    #[test]
    fn bound_never_drops_between_prunes(
        seed in 0u64..1000,
        n in 10usize..60,
        dims in prop::collection::vec(2usize..10, 1..4),
        c in 2usize..4,
    ) {
        let ds = tiny_dataset(seed, n, &dims, c, 0.0);
        let hp = Hyperparams { s: 6, max_iters: 80, seed, ..Default::default() };
        let fit = inference::fit(&ds, &hp).unwrap();
        prop_assert!(fit.trace.monotonicity_violations(1e-6).is_empty());
        prop_assert!(fit.trace.values().iter().all(|v| v.is_finite()));
    }
}

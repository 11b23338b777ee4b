//! Lattice-level checks: exact expectation bookkeeping, the supermartingale
//! property of wealth ratios against the growth-optimal portfolio, and
//! agreement between the cone machinery and the exhaustive profit search.

use nalgebra::DVector;
use nupbr_core::gen;
use nupbr_core::lattice::{
    brute_force_unbounded_profit, one_step_expectation_check, parse_lattice, LatticeModel,
    NupbrVerdict, DEFAULT_PROFIT_SCALES,
};
use nupbr_core::numeraire::{solve_lattice, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_proportions(rng: &mut ChaCha8Rng, model: &LatticeModel) -> Vec<DVector<f64>> {
    let mut out = vec![DVector::zeros(model.dim()); model.num_nodes()];
    for id in model.internal_nodes().collect::<Vec<_>>() {
        let lc = model.node_characteristic(id).unwrap();
        out[id] = gen::sample_admissible(rng, &lc);
    }
    out
}

#[test]
fn wealth_ratios_against_the_optimum_are_supermartingales() {
    let mut rng = ChaCha8Rng::seed_from_u64(7001);
    for round in 0..25 {
        let model = gen::random_nupbr_lattice(&mut rng, 5, 4);
        let solve = solve_lattice(&model, &SolverOptions::default()).unwrap();
        assert!(solve.all_solved, "round {round}: node {:?} unsolved", solve.first_failure);
        let v_star = &solve.path.as_ref().unwrap().wealth;
        assert!(v_star.iter().all(|&v| v > 0.0));

        for _ in 0..20 {
            let pi = random_proportions(&mut rng, &model);
            let v = model.wealth_path(&pi).unwrap();
            let ratio: Vec<f64> = v.iter().zip(v_star).map(|(a, b)| a / b).collect();
            let check = one_step_expectation_check(&model, &ratio).unwrap();
            assert!(
                check.is_supermartingale(1e-10),
                "round {round}: excess {} at node {}",
                check.max_excess,
                check.worst_excess_node
            );
        }

        // the optimum itself gives the constant ratio one
        let rho = &solve.path.as_ref().unwrap().proportions;
        let v = model.wealth_path(rho).unwrap();
        for (a, b) in v.iter().zip(v_star) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn reachability_probabilities_are_a_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(7002);
    for _ in 0..25 {
        let model = gen::random_nupbr_lattice(&mut rng, 5, 4);
        let probs = model.path_probabilities();
        assert_eq!(probs[0], 1.0);
        let leaf_total: f64 = model.leaves().map(|id| probs[id]).sum();
        assert!((leaf_total - 1.0).abs() <= 1e-12);
        // every internal node's mass splits exactly across its children
        for id in model.internal_nodes().collect::<Vec<_>>() {
            let child_sum: f64 = model.node(id).branches.iter().map(|b| probs[b.child]).sum();
            assert!((child_sum - probs[id]).abs() <= 1e-12);
        }

        let values: Vec<f64> = (0..model.num_nodes()).map(|i| i as f64).collect();
        let terminal = model.terminal_distribution(&values);
        let mass: f64 = terminal.iter().map(|&(p, _)| p).sum();
        assert!((mass - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn generated_nupbr_lattices_pass_the_exhaustive_profit_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7003);
    for round in 0..15 {
        // stay within the oracle's exhaustive-search caps
        let model = gen::random_nupbr_lattice(&mut rng, 4, 3);
        match brute_force_unbounded_profit(&model, &DEFAULT_PROFIT_SCALES).unwrap() {
            NupbrVerdict::Holds { nodes_checked } => {
                assert!(nodes_checked >= 1, "round {round}: nothing checked")
            }
            NupbrVerdict::Fails { node, .. } => {
                panic!("round {round}: generator leaked an arbitrage at node {node}")
            }
        }
    }
}

#[test]
fn one_sided_lattice_fails_the_profit_search_and_the_solver() {
    // every branch moves the asset up: a free lottery ticket
    let model = parse_lattice(
        r#"{
            "dim": 1,
            "S0": [1.0],
            "root": {
                "branches": [
                    {"p": 0.5, "dx": [0.1], "child": {}},
                    {"p": 0.5, "dx": [0.2], "child": {}}
                ],
                "dG": 1.0
            }
        }"#,
    )
    .unwrap();

    match brute_force_unbounded_profit(&model, &DEFAULT_PROFIT_SCALES).unwrap() {
        NupbrVerdict::Fails { node, direction, escape } => {
            assert_eq!(node, 0);
            assert!(direction[0] > 0.0);
            // more leverage, more profit, never a loss
            for pair in escape.windows(2) {
                assert!(pair[1].max_terminal_wealth > pair[0].max_terminal_wealth);
            }
            for row in &escape {
                assert!(row.gain_probability >= 1.0 - 1e-12);
            }
        }
        NupbrVerdict::Holds { .. } => panic!("one-sided market passed the profit search"),
    }

    let solve = solve_lattice(&model, &SolverOptions::default()).unwrap();
    assert!(!solve.all_solved);
    assert_eq!(solve.first_failure, Some(0));
}

#[test]
fn conditional_expectations_match_a_direct_leaf_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7004);
    for _ in 0..10 {
        let model = gen::random_nupbr_lattice(&mut rng, 4, 3);
        let mut values = vec![0.0; model.num_nodes()];
        for id in model.leaves().collect::<Vec<_>>() {
            values[id] = rng.random_range(-2.0..2.0);
        }
        // backward induction through the one-step expectations must agree
        // with the probability-weighted sum over leaves
        let mut pulled = values.clone();
        for id in (0..model.num_nodes()).rev() {
            if !model.is_leaf(id) {
                pulled[id] = model.conditional_expectation(&pulled, id).unwrap();
            }
        }
        let probs = model.path_probabilities();
        let direct: f64 = model.leaves().map(|id| values[id] * probs[id]).sum();
        assert!(
            (pulled[0] - direct).abs() <= 1e-12 * direct.abs().max(1.0),
            "backward induction {} vs leaf sum {direct}",
            pulled[0]
        );
    }
}

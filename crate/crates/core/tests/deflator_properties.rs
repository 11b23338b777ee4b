//! End-to-end checks of the deflator pipeline on random markets: the
//! assembled ξ must deflate every sampled strategy to an exact martingale,
//! every stated budget must hold, and a deliberately wrong portfolio must
//! be caught.

use nalgebra::DVector;
use nupbr_core::characteristics::CharacteristicGrid;
use nupbr_core::deflator::{
    deflate_grid, deflate_lattice, standard_strategies, verify_deflator, COMPENSATOR_TOL,
    TV_BUDGET,
};
use nupbr_core::gen;
use nupbr_core::numeraire::SolverOptions;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_markets_deflate_to_exact_martingales() {
    let mut rng = ChaCha8Rng::seed_from_u64(8001);
    let mut in_d_nodes = 0usize;
    for round in 0..25 {
        let model = gen::random_nupbr_lattice(&mut rng, 5, 4);
        let bundle = deflate_lattice(&model, &SolverOptions::default()).unwrap();
        assert!(
            bundle.findings.is_empty(),
            "round {round}: findings {:?}",
            bundle.findings
        );
        let xi = bundle.xi.as_ref().expect("pipeline completed");
        assert_eq!(xi[0], 1.0);
        in_d_nodes += bundle
            .per_node
            .iter()
            .flatten()
            .filter(|d| d.in_d)
            .count();

        let strategies = standard_strategies(&model, 9000 + round, 20);
        let report = verify_deflator(&model, xi, &strategies).unwrap();
        assert!(
            report.max_violation <= 1e-10,
            "round {round}: violation {} on strategy {:?}",
            report.max_violation,
            report
                .per_strategy
                .iter()
                .max_by(|a, b| a.violation.total_cmp(&b.violation))
        );

        let em = bundle.em.as_ref().unwrap();
        assert!(em.max_tv <= TV_BUDGET, "round {round}: tv rate {}", em.max_tv);
        assert!(
            em.max_compensator <= COMPENSATOR_TOL,
            "round {round}: compensator {}",
            em.max_compensator
        );
        for leaf in model.leaves().collect::<Vec<_>>() {
            assert!(
                em.lepingle[leaf] <= em.g_cum[leaf] + 1e-12,
                "round {round}: cumulative variation {} exceeds clock {}",
                em.lepingle[leaf],
                em.g_cum[leaf]
            );
        }
    }
    println!("pipeline exercised {in_d_nodes} nodes with large changed jumps");
}

#[test]
fn perturbed_portfolios_are_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8002);
    let mut detected = 0usize;
    let mut ran = 0usize;
    for round in 0..25 {
        let model = gen::random_nupbr_lattice(&mut rng, 4, 4);
        let bundle = deflate_lattice(&model, &SolverOptions::default()).unwrap();
        let em = &bundle.em.as_ref().unwrap().em;
        let rho = &bundle.solve.path.as_ref().unwrap().proportions;

        let mut control = None;
        for delta in [0.1, -0.1, 0.05, -0.05] {
            let mut tilted: Vec<DVector<f64>> = rho.clone();
            for (id, p) in tilted.iter_mut().enumerate() {
                if !model.is_leaf(id) {
                    p[0] += delta;
                }
            }
            if let Ok(wealth) = model.wealth_path(&tilted) {
                control = Some(wealth);
                break;
            }
        }
        let Some(wealth) = control else { continue };
        ran += 1;
        let fake_xi: Vec<f64> = em.iter().zip(&wealth).map(|(e, v)| e / v).collect();
        let strategies = standard_strategies(&model, 9100 + round, 10);
        let report = verify_deflator(&model, &fake_xi, &strategies).unwrap();
        if report.max_violation > 1e-9 {
            detected += 1;
        }
    }
    assert!(ran >= 20, "only {ran} perturbation controls could run");
    assert_eq!(
        detected, ran,
        "a tilted portfolio slipped through martingale verification"
    );
}

#[test]
fn pre_deflated_grids_rebalance_within_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(8003);
    for round in 0..40 {
        let mut slices: Vec<nupbr_core::characteristics::LocalCharacteristic> = Vec::new();
        let mut bounds = Vec::new();
        while slices.len() < 3 {
            let (lc, bound) = gen::random_changed_slice(&mut rng);
            if let Some(first) = slices.first() {
                if lc.dim() != first.dim() {
                    continue;
                }
            }
            slices.push(lc);
            bounds.push(bound);
        }
        let times: Vec<f64> = (0..slices.len()).map(|i| i as f64).collect();
        let grid = CharacteristicGrid::new(times, slices, 2).unwrap();
        let out = deflate_grid(&grid).unwrap();
        assert!(out.findings.is_empty(), "round {round}: findings {:?}", out.findings);

        for (i, slot) in out.per_slice.iter().enumerate() {
            let deflation = slot.as_ref().expect("all slices are active");
            assert!(deflation.in_d, "round {round}: slice {i} missed its jump tail");
            assert!(deflation.zero_drift_residual <= 1e-10);
            let reb = deflation.rebalanced.as_ref().unwrap();
            // the rebalance LP itself tolerates 1e-9 of budget slack in its
            // lexicographic cascade, so the certificate check must sit above it
            assert!(
                reb.tv <= bounds[i] + 1e-8,
                "round {round}: slice {i} tv {} above the feasibility certificate {}",
                reb.tv,
                bounds[i]
            );
            assert!(reb.density.iter().all(|&p| p > 0.0));

            // mass preservation forces the exponential compensator to zero
            let lc = &grid.slices()[i];
            let table = deflation.u_table.as_ref().unwrap();
            let mut compensator = 0.0;
            let mut tail_mass = 0.0;
            for a in lc.nu().atoms() {
                if a.point.norm() > 1.0 {
                    compensator += a.weight * (table.value_at(&a.point) - 1.0);
                    tail_mass += a.weight;
                }
            }
            assert!(tail_mass > 0.0);
            assert!(
                compensator.abs() <= 1e-12 * tail_mass.max(1.0),
                "round {round}: slice {i} compensator {compensator}"
            );
        }
        assert!(out.lepingle_total <= out.g_total + 1e-12);
    }
}

#[test]
fn deflation_report_is_deterministic() {
    let mut rng_a = ChaCha8Rng::seed_from_u64(8004);
    let mut rng_b = ChaCha8Rng::seed_from_u64(8004);
    let model_a = gen::random_nupbr_lattice(&mut rng_a, 4, 3);
    let model_b = gen::random_nupbr_lattice(&mut rng_b, 4, 3);
    let bundle_a = deflate_lattice(&model_a, &SolverOptions::default()).unwrap();
    let bundle_b = deflate_lattice(&model_b, &SolverOptions::default()).unwrap();
    assert_eq!(bundle_a.xi, bundle_b.xi);
    assert_eq!(
        bundle_a.solve.path.as_ref().unwrap().proportions,
        bundle_b.solve.path.as_ref().unwrap().proportions
    );
}

//! Cross-checks the LP-based immediate-arbitrage decision against the
//! independent sphere-sweep search. Any direction found by either side is
//! audited with direct arithmetic, which is the ground truth both must
//! satisfy.

use nupbr_core::cones::{find_immediate_arbitrage, null_space};
use nupbr_core::gen;
use nupbr_core::sweep::{audit, best_direction, is_witness, kernel_basis, STRONG_MARGIN};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn lp_decision_agrees_with_the_sphere_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(4040);
    let total = 300;
    let mut quarantined = 0;
    let mut oracle_missed = 0;
    for round in 0..total {
        let lc = gen::random_cone_instance(&mut rng);
        let verdict = find_immediate_arbitrage(&lc).expect("decision runs");
        let kernel = kernel_basis(lc.c());
        let best = best_direction(&lc, &kernel, 9000 + round);

        if let Some(w) = &verdict {
            // a returned witness must hold up under direct arithmetic
            let a = audit(&lc, &w.direction);
            assert!(
                is_witness(&a),
                "round {round}: witness fails audit (slack {}, drift {}, c {}, evidence {})",
                a.cone_slack,
                a.drift,
                a.c_residual,
                a.evidence
            );
            if best.as_ref().is_none_or(|(_, s)| *s <= -STRONG_MARGIN) {
                oracle_missed += 1;
            }
            continue;
        }

        match best {
            Some((u, s)) if s >= STRONG_MARGIN => {
                let a = audit(&lc, &u);
                assert!(
                    !is_witness(&a),
                    "round {round}: sweep found a strong witness {u} (margin {s}) the decision missed"
                );
            }
            Some((_, s)) if s > -STRONG_MARGIN => quarantined += 1,
            _ => {}
        }
    }
    println!(
        "sweep agreement: {} instances, {} quarantined (|margin| < {STRONG_MARGIN:.0e}), {} narrow witnesses the sweep missed",
        total, quarantined, oracle_missed
    );
    assert!(
        quarantined * 4 < total,
        "too many marginal instances ({quarantined} of {total}) for the comparison to mean much"
    );
}

#[test]
fn null_directions_are_invisible_to_the_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(5050);
    for _ in 0..200 {
        let lc = gen::random_cone_instance(&mut rng);
        for u in null_space(&lc) {
            assert!((u.norm() - 1.0).abs() <= 1e-10);
            assert!((lc.c() * &u).amax() <= 1e-8, "diffusion sees a null direction");
            for a in lc.nu().atoms() {
                assert!(u.dot(&a.point).abs() <= 1e-8, "an atom sees a null direction");
            }
            assert!(u.dot(lc.b()).abs() <= 1e-8, "drift sees a null direction");
        }
    }
}

#[test]
fn viable_slices_never_report_witnesses() {
    let mut rng = ChaCha8Rng::seed_from_u64(6060);
    for round in 0..100 {
        let dim = 1 + round % 4;
        let lc = gen::random_viable_slice(&mut rng, dim);
        assert!(find_immediate_arbitrage(&lc).unwrap().is_none());
    }
}

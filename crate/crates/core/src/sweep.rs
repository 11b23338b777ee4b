//! Brute-force reference search for immediate-arbitrage directions.
//!
//! The LP-based decision in [`crate::cones`] is fast but indirect. This
//! module answers the same question the slow way: sweep the unit sphere of
//! the diffusion kernel with a dense set of directions, score each one by
//! its worst membership slack, and sharpen the best candidates with a
//! seeded local search. Every direction either side proposes is judged by
//! [`audit`], which evaluates the membership conditions with direct
//! arithmetic and nothing else, so the two procedures can disagree only if
//! one of them is wrong about a concrete vector.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::characteristics::LocalCharacteristic;
use crate::cones::residual_drift;

/// Margin at which a sweep verdict counts as decisive. Directions whose
/// best score is closer to zero than this sit on the cone boundary, where
/// neither procedure can be trusted over the other.
pub const STRONG_MARGIN: f64 = 1e-6;

/// Minimum coupling to the slice for a direction to count as exposed
/// rather than null.
pub const EVIDENCE_TOL: f64 = 1e-9;

/// The membership conditions of one direction, evaluated directly.
#[derive(Debug, Clone, Copy)]
pub struct DirectionAudit {
    /// min over atoms of u·z; a cone member needs ≥ 0.
    pub cone_slack: f64,
    /// Residual drift u·b − ∫ u·x 1_{|x|≤1} dν; arbitrage needs ≥ 0.
    pub drift: f64,
    /// max row of |c·u|; a riskless direction needs 0.
    pub c_residual: f64,
    /// max(max_j u·z_j, |u·b|); anything a null direction lacks.
    pub evidence: f64,
}

/// Evaluates the arbitrage membership conditions for `u` by direct
/// arithmetic.
pub fn audit(lc: &LocalCharacteristic, u: &DVector<f64>) -> DirectionAudit {
    let mut cone_slack = f64::INFINITY;
    let mut best_jump = 0.0f64;
    for a in lc.nu().atoms() {
        let d = u.dot(&a.point);
        cone_slack = cone_slack.min(d);
        best_jump = best_jump.max(d);
    }
    DirectionAudit {
        cone_slack,
        drift: residual_drift(lc, u),
        c_residual: (lc.c() * u).amax(),
        evidence: best_jump.max(u.dot(lc.b()).abs()),
    }
}

/// Whether an audited direction passes every membership condition at the
/// tolerances the decision procedure itself uses.
pub fn is_witness(a: &DirectionAudit) -> bool {
    a.c_residual <= 1e-10
        && a.cone_slack >= -1e-12
        && a.drift >= -1e-12
        && a.evidence > EVIDENCE_TOL
}

/// min of the two inequality slacks; positive means the direction sits
/// strictly inside the arbitrage conditions.
pub fn margin(a: &DirectionAudit) -> f64 {
    a.cone_slack.min(a.drift)
}

/// Orthonormal basis of the kernel of the covariance matrix, the subspace
/// where riskless directions can live at all.
pub fn kernel_basis(c: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let d = c.nrows();
    if c.amax() == 0.0 {
        return (0..d)
            .map(|i| DVector::from_fn(d, |r, _| if r == i { 1.0 } else { 0.0 }))
            .collect();
    }
    let svd = c.clone().svd(true, true);
    let v_t = svd.v_t.as_ref().expect("requested");
    let smax = svd.singular_values.max();
    (0..d)
        .filter(|&i| svd.singular_values[i] <= 1e-10 * smax.max(1.0))
        .map(|i| v_t.row(i).transpose())
        .collect()
}

fn sweep_directions(kernel: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let m = kernel.len();
    match m {
        0 => Vec::new(),
        1 => vec![kernel[0].clone(), -&kernel[0]],
        2 => (0..4000)
            .map(|i| {
                let theta = std::f64::consts::TAU * i as f64 / 4000.0;
                &kernel[0] * theta.cos() + &kernel[1] * theta.sin()
            })
            .collect(),
        _ => (0..6000)
            .map(|i| {
                let t = (i as f64 + 0.5) / 6000.0;
                let phi = (1.0 - 2.0 * t).acos();
                let theta = std::f64::consts::PI * (1.0 + 5f64.sqrt()) * i as f64;
                &kernel[0] * (phi.sin() * theta.cos())
                    + &kernel[1] * (phi.sin() * theta.sin())
                    + &kernel[2] * phi.cos()
            })
            .collect(),
    }
}

/// Best direction and margin the sweep can find, sharpened by seeded local
/// search around the most promising candidates. `None` when no swept
/// direction couples to the slice at all.
pub fn best_direction(
    lc: &LocalCharacteristic,
    kernel: &[DVector<f64>],
    seed: u64,
) -> Option<(DVector<f64>, f64)> {
    let m = kernel.len();
    let mut scored: Vec<(f64, DVector<f64>)> = sweep_directions(kernel)
        .into_iter()
        .filter_map(|u| {
            let a = audit(lc, &u);
            (a.evidence > EVIDENCE_TOL).then(|| (margin(&a), u))
        })
        .collect();
    scored.sort_by(|x, y| y.0.total_cmp(&x.0));
    scored.truncate(12);
    if scored.is_empty() {
        return None;
    }
    if m <= 1 {
        let (s, u) = scored.swap_remove(0);
        return Some((u, s));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = scored[0].clone();
    for (s0, u0) in scored {
        let mut cur = (s0, u0);
        let mut sigma = 0.3;
        for _ in 0..80 {
            for _ in 0..15 {
                let probe = DVector::from_fn(cur.1.len(), |r, _| {
                    cur.1[r] + sigma * (rng.random::<f64>() - 0.5)
                });
                // stay inside the riskless subspace
                let mut proj = DVector::zeros(cur.1.len());
                for k in kernel {
                    proj += k * probe.dot(k);
                }
                if proj.norm() < 1e-9 {
                    continue;
                }
                let u = proj.normalize();
                let a = audit(lc, &u);
                if a.evidence > EVIDENCE_TOL && margin(&a) > cur.0 {
                    cur = (margin(&a), u);
                }
            }
            sigma *= 0.85;
        }
        if cur.0 > best.0 {
            best = cur;
        }
    }
    Some((best.1, best.0))
}

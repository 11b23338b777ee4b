//! Seeded random model generators.
//!
//! Everything here exists to feed the verification machinery: random slices
//! with a guaranteed-empty immediate-arbitrage set, unfiltered cone
//! instances for oracle comparisons, balanced lattices, rebalance targets
//! with a known-feasible reweighting, and admissible strategies. All
//! generators draw from a caller-supplied RNG, so a fixed seed reproduces a
//! fixed model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::characteristics::LocalCharacteristic;
use crate::cones;
use crate::lattice::{LatticeModel, LatticeWire, NodeWire, BranchWire, ProbWire};
use crate::measure::{Atom, DiscreteMeasure, SupportEnvelope};

fn unif(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_direction(rng: &mut impl Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| standard_normal(rng));
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// A point in the admissible cone of the slice, biased towards the interior:
/// along a random direction, scaled to keep every atom product strictly
/// above -1. Returns zero under an unbounded envelope, where the cone is
/// just the origin.
pub fn sample_admissible(rng: &mut impl Rng, lc: &LocalCharacteristic) -> DVector<f64> {
    if lc.nu().envelope() == SupportEnvelope::UnboundedAllDirections {
        return DVector::zeros(lc.dim());
    }
    let u = random_direction(rng, lc.dim());
    let mut t_max = 10.0f64;
    for a in lc.nu().atoms() {
        let dot = u.dot(&a.point);
        if dot < 0.0 {
            t_max = t_max.min(-1.0 / dot);
        }
    }
    u * (unif(rng, 0.0, 0.95) * t_max)
}

/// `count > dim` directions spread out enough that their convex hull keeps
/// the origin strictly inside: opposite signs on a line, equally spaced
/// angles in the plane, a randomly rotated tetrahedron plus extras in space.
fn anchor_directions(rng: &mut impl Rng, dim: usize, count: usize) -> Vec<DVector<f64>> {
    assert!(count > dim);
    match dim {
        1 => (0..count)
            .map(|i| {
                let sign = match i {
                    0 => 1.0,
                    1 => -1.0,
                    _ => {
                        if rng.random::<bool>() {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                };
                DVector::from_element(1, sign)
            })
            .collect(),
        2 => {
            let offset = unif(rng, 0.0, std::f64::consts::TAU);
            (0..count)
                .map(|i| {
                    let theta = offset + std::f64::consts::TAU * i as f64 / count as f64;
                    DVector::from_vec(vec![theta.cos(), theta.sin()])
                })
                .collect()
        }
        _ => {
            // the d+1 vertices of a regular simplex centered at the origin,
            // under a random rotation, plus free extras
            let alpha = (1.0 - ((dim + 1) as f64).sqrt()) / dim as f64;
            let mut pts: Vec<DVector<f64>> = (0..dim)
                .map(|i| DVector::from_fn(dim, |r, _| if r == i { 1.0 } else { 0.0 }))
                .collect();
            pts.push(DVector::from_element(dim, alpha));
            let centroid = pts.iter().fold(DVector::zeros(dim), |acc, p| acc + p)
                / (dim + 1) as f64;
            let spin = DMatrix::from_fn(dim, dim, |_, _| standard_normal(rng)).qr().q();
            let mut dirs: Vec<DVector<f64>> = pts
                .iter()
                .map(|p| &spin * (p - &centroid).normalize())
                .collect();
            while dirs.len() < count {
                dirs.push(random_direction(rng, dim));
            }
            dirs
        }
    }
}

/// Jump atoms whose convex hull surrounds the origin with a healthy margin:
/// anchor directions scaled by moderate magnitudes plus a little noise. No
/// direction can have all jumps on its favourable side, which keeps
/// immediate arbitrage away regardless of drift and diffusion, and the
/// margin keeps the growth optimum well inside the admissible cone.
fn surrounding_jumps(rng: &mut impl Rng, dim: usize, count: usize, spread: f64) -> Vec<DVector<f64>> {
    anchor_directions(rng, dim, count)
        .into_iter()
        .map(|dir| {
            let mut p = dir * unif(rng, 0.4, 1.0) * spread;
            for x in p.iter_mut() {
                *x = (*x + standard_normal(rng) * 0.02 * spread).clamp(-0.9, 0.9);
            }
            p
        })
        .collect()
}

fn random_psd(rng: &mut impl Rng, dim: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| standard_normal(rng) * scale);
    &a * a.transpose() + DMatrix::identity(dim, dim) * (0.01 * scale * scale)
}

/// A random slice guaranteed to have an empty immediate-arbitrage set, for
/// exercising the growth maximiser on solvable inputs. Dimension 1 to 4,
/// two-sided jumps, sometimes a full-rank diffusion, drift of moderate size.
pub fn random_viable_slice(rng: &mut impl Rng, dim: usize) -> LocalCharacteristic {
    assert!((1..=4).contains(&dim));
    for _ in 0..64 {
        let count = dim + 1 + rng.random_range(0..3usize);
        let spread = unif(rng, 0.2, 0.7);
        let jumps = surrounding_jumps(rng, dim, count, spread);
        let atoms: Vec<Atom> = jumps
            .into_iter()
            .map(|point| Atom { point, weight: unif(rng, 0.1, 1.0) })
            .collect();
        let nu = match DiscreteMeasure::from_atoms_merging(dim, atoms, SupportEnvelope::Bounded) {
            Ok(nu) => nu,
            Err(_) => continue,
        };
        let c = if rng.random::<f64>() < 0.5 {
            DMatrix::zeros(dim, dim)
        } else {
            let scale = unif(rng, 0.1, 0.4);
            random_psd(rng, dim, scale)
        };
        let b = DVector::from_fn(dim, |_, _| unif(rng, -0.4, 0.4));
        let d_g = [1.0, 0.5, 0.25][rng.random_range(0..3usize)];
        let lc = match LocalCharacteristic::new(b, c, nu, d_g) {
            Ok(lc) => lc,
            Err(_) => continue,
        };
        match cones::find_immediate_arbitrage(&lc) {
            Ok(None) => return lc,
            _ => continue,
        }
    }
    panic!("could not draw an arbitrage-free slice in 64 attempts");
}

/// An unfiltered random slice for comparing the cone decision procedure
/// against a brute-force oracle: small dimension, mixed atom geometry
/// (sometimes clustered on one side of a hyperplane, sometimes surrounding
/// zero), diffusion that is zero, singular, or full rank.
pub fn random_cone_instance(rng: &mut impl Rng) -> LocalCharacteristic {
    let dim = rng.random_range(1..=3usize);
    let n_atoms = rng.random_range(0..=5usize);
    let one_sided = rng.random::<f64>() < 0.45;
    let axis = random_direction(rng, dim);
    let mut atoms = Vec::new();
    for _ in 0..n_atoms {
        let point = if one_sided {
            // cluster weakly on the favourable side of the axis
            let along = unif(rng, 0.0, 2.5);
            let mut p = &axis * along;
            for x in p.iter_mut() {
                *x += standard_normal(rng) * 0.05;
                *x = x.clamp(-0.9, 3.0);
            }
            p
        } else {
            random_direction(rng, dim) * unif(rng, 0.1, 2.5)
        };
        atoms.push(Atom { point, weight: unif(rng, 0.05, 1.0) });
    }
    let nu = DiscreteMeasure::from_atoms_merging(dim, atoms, SupportEnvelope::Bounded)
        .unwrap_or_else(|_| DiscreteMeasure::zero(dim));
    let c = match rng.random_range(0..3u8) {
        0 => DMatrix::zeros(dim, dim),
        1 => random_psd(rng, dim, 0.3),
        _ => {
            // rank-deficient: a single dyad
            let v = random_direction(rng, dim);
            &v * v.transpose() * unif(rng, 0.05, 0.5)
        }
    };
    let b = if rng.random::<f64>() < 0.3 {
        DVector::zeros(dim)
    } else if one_sided && rng.random::<f64>() < 0.5 {
        &axis * unif(rng, 0.0, 0.5)
    } else {
        DVector::from_fn(dim, |_, _| unif(rng, -0.5, 0.5))
    };
    LocalCharacteristic::new(b, c, nu, 1.0).expect("generated slice is well formed")
}

/// A random lattice with two-sided branch laws at every node, so that no
/// node admits immediate arbitrage and the growth maximiser succeeds
/// everywhere. Dimension 1 or 2.
pub fn random_nupbr_lattice(
    rng: &mut impl Rng,
    max_depth: usize,
    max_branching: usize,
) -> LatticeModel {
    let dim = rng.random_range(1..=2usize);
    assert!(max_branching > dim, "need at least dim+1 branches for two-sided laws");
    let depth = rng.random_range(2..=max_depth.max(2));

    fn build(
        rng: &mut impl Rng,
        dim: usize,
        level: usize,
        depth: usize,
        max_branching: usize,
    ) -> NodeWire {
        if level >= depth || (level >= 1 && rng.random::<f64>() < 0.15) {
            return NodeWire { branches: Vec::new(), d_g: 1.0 };
        }
        let k = rng.random_range((dim + 1)..=max_branching);
        let jumps = loop {
            let spread = unif(rng, 0.15, 0.5);
            let candidate = surrounding_jumps(rng, dim, k, spread);
            // reject near-degenerate geometry where recentring fails to
            // surround the origin
            let lc_atoms: Vec<Atom> = candidate
                .iter()
                .map(|p| Atom { point: p.clone(), weight: 1.0 / k as f64 })
                .collect();
            let nu = DiscreteMeasure::from_atoms_merging(dim, lc_atoms, SupportEnvelope::Bounded);
            let Ok(nu) = nu else { continue };
            let b = nu.barycenter();
            let lc = LocalCharacteristic::new(b, DMatrix::zeros(dim, dim), nu, 1.0).unwrap();
            if matches!(cones::find_immediate_arbitrage(&lc), Ok(None)) {
                break candidate;
            }
        };
        let mut raw: Vec<f64> = (0..k).map(|_| unif(rng, 0.2, 1.0)).collect();
        let total: f64 = raw.iter().sum();
        for p in raw.iter_mut() {
            *p /= total;
        }
        let head: f64 = raw[..k - 1].iter().sum();
        raw[k - 1] = 1.0 - head;
        let branches = jumps
            .into_iter()
            .zip(raw)
            .map(|(jump, p)| BranchWire {
                p: ProbWire::Real(p),
                dx: jump.iter().copied().collect(),
                child: build(rng, dim, level + 1, depth, max_branching),
            })
            .collect();
        NodeWire { branches, d_g: 1.0 }
    }

    let root = build(rng, dim, 0, depth, max_branching);
    let wire = LatticeWire {
        dim,
        s0: (0..dim).map(|_| unif(rng, 0.5, 2.0)).collect(),
        root,
    };
    LatticeModel::from_wire(wire).expect("generated lattice is well formed")
}

/// A rebalance target with a certificate: returns a measure F whose
/// barycenter is off zero, built by perturbing a zero-barycenter measure, so
/// a mass-preserving zero-barycenter reweighting within total variation
/// `tv_bound` is feasible by construction.
pub fn random_rebalance_target(rng: &mut impl Rng) -> (DiscreteMeasure, f64) {
    let dim = rng.random_range(1..=2usize);
    'outer: for _ in 0..256 {
        let k = rng.random_range(2..=5usize);
        let base_weights: Vec<f64> = (0..k).map(|_| unif(rng, 0.15, 0.5)).collect();
        let mut points: Vec<DVector<f64>> = (0..k - 1)
            .map(|_| random_direction(rng, dim) * unif(rng, 1.1, 5.0))
            .collect();
        let mut weighted_sum = DVector::zeros(dim);
        for (p, &w) in points.iter().zip(&base_weights) {
            weighted_sum.axpy(w, p, 1.0);
        }
        let last = -weighted_sum / base_weights[k - 1];
        if last.norm() <= 1.05 || last.norm() > 8.0 {
            continue;
        }
        points.push(last);
        // shift mass between two atoms to knock the barycenter off zero
        let i = rng.random_range(0..k);
        let j = (i + 1 + rng.random_range(0..k - 1)) % k;
        let m = unif(rng, 0.05, 0.25_f64.min(base_weights[i] - 0.05).max(0.051));
        let mut weights = base_weights.clone();
        weights[i] -= m;
        weights[j] += m;
        if weights[i] <= 0.02 {
            continue;
        }
        let atoms: Vec<Atom> = points
            .iter()
            .zip(&weights)
            .map(|(p, &w)| Atom { point: p.clone(), weight: w })
            .collect();
        let Ok(f) =
            DiscreteMeasure::new(dim, atoms, SupportEnvelope::UnboundedAllDirections)
        else {
            continue 'outer;
        };
        if f.barycenter().norm() < 1e-6 {
            continue;
        }
        return (f, 2.0 * m);
    }
    panic!("could not draw a rebalance target in 256 attempts");
}

/// A slice that is already expressed in numeraire units and lands in D:
/// its jump tail is nonempty, and shifting the tail by β·b recovers a
/// measure with a feasible zero-barycenter reweighting within the returned
/// total variation bound. Drift is kept small enough that the shift never
/// pulls a tail atom inside the truncation ball.
pub fn random_changed_slice(rng: &mut impl Rng) -> (LocalCharacteristic, f64) {
    let (f, bound) = random_rebalance_target(rng);
    let dim = f.dim();
    let mass = f.mass();
    let b = random_direction(rng, dim) * unif(rng, 0.0, 0.01) * mass;
    let beta = 1.0 / mass;
    let tail = f
        .convolve_dirac(&(-(&b) * beta))
        .expect("shift dimension matches");
    let mut atoms: Vec<Atom> = tail.atoms().to_vec();
    for _ in 0..rng.random_range(0..=2usize) {
        atoms.push(Atom {
            point: random_direction(rng, dim) * unif(rng, 0.05, 0.5),
            weight: unif(rng, 0.05, 0.5),
        });
    }
    let nu = DiscreteMeasure::new(dim, atoms, SupportEnvelope::UnboundedAllDirections)
        .expect("generated atoms are finite and positive");
    let d_g = if rng.random::<bool>() { 1.0 } else { 0.5 };
    let lc = LocalCharacteristic::new(b, DMatrix::zeros(dim, dim), nu, d_g)
        .expect("generated slice is well formed");
    (lc, bound)
}

/// One predictable strategy in holdings (price units), scaled node by node
/// so that its unit-capital value process stays strictly positive on every
/// branch.
pub fn random_admissible_holdings(rng: &mut impl Rng, model: &LatticeModel) -> Vec<DVector<f64>> {
    let prices = model.price_table();
    let dim = model.dim();
    let mut holdings = vec![DVector::zeros(dim); model.num_nodes()];
    let mut value = vec![0.0; model.num_nodes()];
    value[0] = 1.0;
    for id in 0..model.num_nodes() {
        let node = model.node(id);
        if node.is_leaf() {
            continue;
        }
        let mut h = DVector::from_fn(dim, |i, _| standard_normal(rng) * 0.5 / prices[id][i].max(1e-6));
        let worst: f64 = node
            .branches
            .iter()
            .map(|b| {
                let ds = &prices[b.child] - &prices[id];
                h.dot(&ds)
            })
            .fold(f64::INFINITY, f64::min);
        if worst < 0.0 {
            let cap = 0.9 * value[id] / (-worst);
            if cap < 1.0 {
                h *= cap;
            }
        }
        holdings[id] = h;
        for b in &node.branches {
            let ds = &prices[b.child] - &prices[id];
            value[b.child] = value[id] + holdings[id].dot(&ds);
        }
    }
    holdings
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn viable_slices_have_no_arbitrage() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let dim = rng.random_range(1..=3usize);
            let lc = random_viable_slice(&mut rng, dim);
            assert!(cones::find_immediate_arbitrage(&lc).unwrap().is_none());
        }
    }

    #[test]
    fn admissible_samples_stay_in_the_cone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let lc = random_viable_slice(&mut rng, 2);
            for _ in 0..50 {
                let p = sample_admissible(&mut rng, &lc);
                assert!(cones::in_admissible_cone(&lc, &p).unwrap());
            }
        }
    }

    #[test]
    fn generated_lattices_validate_and_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let m = random_nupbr_lattice(&mut rng, 4, 4);
            assert!(m.max_depth() <= 4);
            assert!(m.max_branching() <= 4);
            for id in m.internal_nodes() {
                let lc = m.node_characteristic(id).unwrap();
                assert!(cones::find_immediate_arbitrage(&lc).unwrap().is_none());
            }
        }
    }

    #[test]
    fn rebalance_targets_have_offset_barycenter_and_known_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let (f, bound) = random_rebalance_target(&mut rng);
            assert!(f.barycenter().norm() > 1e-6);
            assert!(bound <= 0.6);
            assert!(f.mass() > 0.0);
        }
    }

    #[test]
    fn generators_are_deterministic_for_a_fixed_seed() {
        let a = random_viable_slice(&mut ChaCha8Rng::seed_from_u64(42), 2);
        let b = random_viable_slice(&mut ChaCha8Rng::seed_from_u64(42), 2);
        assert_eq!(a, b);
    }
}

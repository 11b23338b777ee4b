//! Pointwise portfolio cones: admissible directions, null directions, and
//! the search for immediate-arbitrage directions.
//!
//! For a slice (b, c, ν) three sets of portfolio vectors matter:
//!
//! * the admissible cone C: directions whose one-step loss is capped, i.e.
//!   ν puts no mass on {pᵀx < -1}; a declared-unbounded jump envelope
//!   collapses C to {0};
//! * the null space N: directions the slice cannot distinguish from zero
//!   (pᵀc = 0, every atom orthogonal to p, pᵀb = 0);
//! * the immediate-arbitrage set I: directions outside N that carry no
//!   diffusion risk, can only jump in their favour, and have nonnegative
//!   residual drift. Nonempty I means growth is unbounded and no numeraire
//!   portfolio exists.
//!
//! Membership in I is decided exactly (up to stated tolerances) with two
//! families of linear programs over the box |p|∞ ≤ 1: first maximise the
//! residual drift over the risk-free jump-favourable cone; if that tops out
//! at zero, sweep the zero-drift faces looking for a direction some atom
//! strictly favours.

use nalgebra::{DMatrix, DVector};

use crate::characteristics::{LocalCharacteristic, TRUNCATION_RADIUS};
use crate::error::{Error, Result};
use crate::lp::{LpOutcome, LpProblem};
use crate::measure::SupportEnvelope;

/// LP optima above this are treated as strictly positive verdicts.
const DECISION_TOL: f64 = 1e-9;
/// Singular values below this (relative) are treated as zero when splitting
/// R^d into N and its complement.
const KERNEL_TOL: f64 = 1e-10;
/// Witness acceptance thresholds.
const WITNESS_C_TOL: f64 = 1e-10;
const WITNESS_CONE_TOL: f64 = 1e-12;
const WITNESS_DRIFT_TOL: f64 = 1e-12;

/// An immediate-arbitrage direction together with the margins by which it
/// meets each membership condition. The direction is normalised to |p|∞ = 1
/// and has its null-space component removed.
#[derive(Debug, Clone)]
pub struct ArbWitness {
    pub direction: DVector<f64>,
    /// Residual drift pᵀb - ∫ pᵀx 1_{|x|≤1} dν at the witness (≥ -1e-12).
    pub drift_margin: f64,
    /// min over atoms of pᵀz (0 when ν has no atoms); must be ≥ -1e-12.
    pub cone_slack: f64,
    /// max row of |c p|; must be ≤ 1e-10.
    pub c_residual: f64,
    /// Evidence that p is not a null direction: max(max_j pᵀz_j, |pᵀb|).
    pub evidence: f64,
}

/// Everything the cone analysis of one slice produces.
#[derive(Debug, Clone)]
pub struct ConeReport {
    /// Orthonormal basis of the null space N, sign-canonicalised so the
    /// first nonzero entry of each vector is positive.
    pub null_space_basis: Vec<DVector<f64>>,
    pub witness: Option<ArbWitness>,
    /// Optimum of the residual-drift program; ≈ 0 whenever I is empty.
    pub drift_optimum: f64,
    /// Best atom-positivity value found on the zero-drift faces; 0 when the
    /// drift program already produced a witness or ν has no atoms.
    pub face_positivity: f64,
}

/// Whether p lies in the admissible cone C of the slice: under a bounded
/// envelope, no atom may fall below pᵀz = -1 (exactly -1 is allowed); under
/// a declared-unbounded envelope only the zero vector is admissible.
pub fn in_admissible_cone(lc: &LocalCharacteristic, p: &DVector<f64>) -> Result<bool> {
    if p.len() != lc.dim() {
        return Err(Error::DimensionMismatch { expected: lc.dim(), got: p.len() });
    }
    match lc.nu().envelope() {
        SupportEnvelope::UnboundedAllDirections => Ok(p.iter().all(|&x| x == 0.0)),
        SupportEnvelope::Bounded => {
            Ok(lc.nu().atoms().iter().all(|a| p.dot(&a.point) >= -1.0))
        }
    }
}

/// The residual drift functional pᵀb - ∫ pᵀx 1_{|x|≤1} ν(dx) whose sign
/// decides immediate arbitrage on the risk-free jump-favourable cone.
pub fn residual_drift(lc: &LocalCharacteristic, p: &DVector<f64>) -> f64 {
    p.dot(lc.b()) - p.dot(&lc.small_jump_mean())
}

/// The rows every null direction must annihilate: c, the atom locations,
/// and b.
fn constraint_stack(lc: &LocalCharacteristic) -> DMatrix<f64> {
    let d = lc.dim();
    let n = lc.nu().atoms().len();
    let mut m = DMatrix::zeros(d + n + 1, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = lc.c()[(i, j)];
        }
    }
    for (k, a) in lc.nu().atoms().iter().enumerate() {
        for j in 0..d {
            m[(d + k, j)] = a.point[j];
        }
    }
    for j in 0..d {
        m[(d + n, j)] = lc.b()[j];
    }
    m
}

fn canonical_sign(v: &mut DVector<f64>) {
    if let Some(&lead) = v.iter().find(|x| x.abs() > 1e-14) {
        if lead < 0.0 {
            *v *= -1.0;
        }
    }
}

/// Splits R^d into an orthonormal basis of N and one of its orthogonal
/// complement, via an SVD of the constraint stack.
pub fn null_space_split(lc: &LocalCharacteristic) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let m = constraint_stack(lc);
    let d = lc.dim();
    if m.iter().all(|&x| x == 0.0) {
        let kernel = (0..d)
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = 1.0;
                e
            })
            .collect();
        return (kernel, Vec::new());
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let sigma_max = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    let tol = KERNEL_TOL * sigma_max.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let mut kernel = Vec::new();
    let mut range = Vec::new();
    for i in 0..v_t.nrows() {
        let mut v: DVector<f64> = v_t.row(i).transpose();
        canonical_sign(&mut v);
        if i < rank {
            range.push(v);
        } else {
            kernel.push(v);
        }
    }
    (kernel, range)
}

/// Orthonormal basis of the null space N.
pub fn null_space(lc: &LocalCharacteristic) -> Vec<DVector<f64>> {
    null_space_split(lc).0
}

struct WitnessMargins {
    drift: f64,
    cone_slack: f64,
    c_residual: f64,
    max_dot: f64,
    b_dot: f64,
}

fn witness_margins(lc: &LocalCharacteristic, p: &DVector<f64>) -> WitnessMargins {
    let dots: Vec<f64> = lc.nu().atoms().iter().map(|a| p.dot(&a.point)).collect();
    let cone_slack = dots.iter().copied().fold(f64::INFINITY, f64::min);
    let max_dot = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cp = lc.c() * p;
    WitnessMargins {
        drift: residual_drift(lc, p),
        cone_slack: if dots.is_empty() { 0.0 } else { cone_slack },
        c_residual: cp.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        max_dot: if dots.is_empty() { 0.0 } else { max_dot },
        b_dot: p.dot(lc.b()),
    }
}

fn margins_acceptable(m: &WitnessMargins) -> bool {
    m.c_residual <= WITNESS_C_TOL
        && m.cone_slack >= -WITNESS_CONE_TOL
        && m.drift >= -WITNESS_DRIFT_TOL
        && (m.max_dot > 1e-12 || m.b_dot.abs() > 1e-10)
}

/// Removes the N-component, re-projects onto constraints the LP meant to
/// hold with equality, and rescales to |p|∞ = 1. Falls back to the raw
/// (rescaled) vector when the cleanup breaks a membership condition.
fn clean_witness(lc: &LocalCharacteristic, raw: &DVector<f64>) -> Option<DVector<f64>> {
    let normalize = |mut p: DVector<f64>| -> Option<DVector<f64>> {
        let sup = p.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if sup < 1e-12 {
            return None;
        }
        p /= sup;
        Some(p)
    };

    let (kernel, _) = null_space_split(lc);
    let mut p = raw.clone();
    for n in &kernel {
        let coeff = n.dot(&p);
        p.axpy(-coeff, n, 1.0);
    }

    // rows the LP held at equality: all of c, plus atoms whose dot product
    // came out at zero up to LP noise
    let scale = p.norm().max(1e-300);
    let d = lc.dim();
    let mut active_rows: Vec<DVector<f64>> = (0..d)
        .map(|i| lc.c().row(i).transpose())
        .filter(|r: &DVector<f64>| r.norm() > 0.0)
        .collect();
    for a in lc.nu().atoms() {
        let dot = p.dot(&a.point);
        if dot.abs() <= 1e-9 * a.point.norm().max(1.0) * scale {
            active_rows.push(a.point.clone());
        }
    }
    let projected = if active_rows.is_empty() {
        p.clone()
    } else {
        let mut m = DMatrix::zeros(active_rows.len(), d);
        for (i, r) in active_rows.iter().enumerate() {
            for j in 0..d {
                m[(i, j)] = r[j];
            }
        }
        let svd = m.svd(false, true);
        let v_t = svd.v_t.expect("svd requested v_t");
        let sigma_max = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
        let tol = KERNEL_TOL * sigma_max.max(1.0);
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let mut q = p.clone();
        for i in 0..rank {
            let v: DVector<f64> = v_t.row(i).transpose();
            let coeff = v.dot(&q);
            q.axpy(-coeff, &v, 1.0);
        }
        q
    };

    for candidate in [projected, p, raw.clone()] {
        if let Some(scaled) = normalize(candidate) {
            if margins_acceptable(&witness_margins(lc, &scaled)) {
                return Some(scaled);
            }
        }
    }
    None
}

fn build_witness(lc: &LocalCharacteristic, raw: &DVector<f64>) -> Option<ArbWitness> {
    let direction = clean_witness(lc, raw)?;
    let m = witness_margins(lc, &direction);
    Some(ArbWitness {
        direction,
        drift_margin: m.drift,
        cone_slack: m.cone_slack,
        c_residual: m.c_residual,
        evidence: m.max_dot.max(m.b_dot.abs()),
    })
}

/// Adds the shared feasible region of both LP families: pᵀc = 0 row-wise,
/// every atom weakly favourable, |p|∞ ≤ 1.
fn base_feasible_region(lc: &LocalCharacteristic, p: &mut LpProblem) {
    let d = lc.dim();
    for i in 0..d {
        let row: Vec<f64> = (0..d).map(|j| lc.c()[(i, j)]).collect();
        if row.iter().any(|&x| x != 0.0) {
            p.eq(&row, 0.0);
        }
    }
    for a in lc.nu().atoms() {
        let row: Vec<f64> = a.point.iter().copied().collect();
        p.ge(&row, 0.0);
    }
    p.set_all_bounds(-1.0, 1.0);
}

/// Full cone analysis of one slice: null-space basis plus the I-membership
/// decision with margins.
pub fn cone_report(lc: &LocalCharacteristic) -> Result<ConeReport> {
    let null_space_basis = null_space(lc);

    if lc.nu().envelope() == SupportEnvelope::UnboundedAllDirections {
        // jumps can strike from any direction, so no nonzero p has one-sided
        // jump exposure and I is empty by fiat of the envelope
        return Ok(ConeReport {
            null_space_basis,
            witness: None,
            drift_optimum: 0.0,
            face_positivity: 0.0,
        });
    }

    let d = lc.dim();
    let drift_coeffs: Vec<f64> = {
        let small = lc.small_jump_mean();
        (0..d).map(|i| lc.b()[i] - small[i]).collect()
    };

    let mut drift_lp = LpProblem::maximize(&drift_coeffs);
    base_feasible_region(lc, &mut drift_lp);
    let drift_sol = match drift_lp.solve()? {
        LpOutcome::Optimal(s) => s,
        other => {
            return Err(Error::Internal(format!(
                "drift program over a compact nonempty region reported {other:?}"
            )))
        }
    };
    let drift_optimum = drift_sol.objective;

    if drift_optimum > DECISION_TOL {
        let raw = DVector::from_vec(drift_sol.x.clone());
        if let Some(witness) = build_witness(lc, &raw) {
            return Ok(ConeReport {
                null_space_basis,
                witness: Some(witness),
                drift_optimum,
                face_positivity: 0.0,
            });
        }
    }

    // drift tops out at zero: look for a zero-drift direction that some atom
    // strictly favours
    let mut face_positivity = 0.0f64;
    let mut face_witness: Option<ArbWitness> = None;
    for atom in lc.nu().atoms() {
        let objective: Vec<f64> = atom.point.iter().copied().collect();
        let mut face_lp = LpProblem::maximize(&objective);
        base_feasible_region(lc, &mut face_lp);
        face_lp.ge(&drift_coeffs, 0.0);
        let sol = match face_lp.solve()? {
            LpOutcome::Optimal(s) => s,
            LpOutcome::Infeasible => continue,
            LpOutcome::Unbounded => {
                return Err(Error::Internal("face program over a box reported unbounded".into()))
            }
        };
        face_positivity = face_positivity.max(sol.objective);
        if sol.objective > DECISION_TOL.max(DECISION_TOL * atom.point.norm()) {
            let raw = DVector::from_vec(sol.x);
            if let Some(witness) = build_witness(lc, &raw) {
                face_witness = Some(witness);
                break;
            }
        }
    }

    Ok(ConeReport {
        null_space_basis,
        witness: face_witness,
        drift_optimum,
        face_positivity,
    })
}

/// Just the I-membership decision: a witness direction if one exists.
pub fn find_immediate_arbitrage(lc: &LocalCharacteristic) -> Result<Option<ArbWitness>> {
    Ok(cone_report(lc)?.witness)
}

/// True when the slice needs no large-jump handling at all: every atom is
/// inside the truncation ball.
pub fn all_jumps_small(lc: &LocalCharacteristic) -> bool {
    lc.nu().atoms().iter().all(|a| a.point.norm() <= TRUNCATION_RADIUS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{Atom, DiscreteMeasure, SupportEnvelope};

    fn slice(
        b: &[f64],
        c_rows: &[&[f64]],
        jumps: &[(&[f64], f64)],
        envelope: SupportEnvelope,
    ) -> LocalCharacteristic {
        let d = b.len();
        let mut c = DMatrix::zeros(d, d);
        for (i, row) in c_rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                c[(i, j)] = v;
            }
        }
        let atoms = jumps
            .iter()
            .map(|&(z, w)| Atom { point: DVector::from_row_slice(z), weight: w })
            .collect();
        LocalCharacteristic::new(
            DVector::from_row_slice(b),
            c,
            DiscreteMeasure::new(d, atoms, envelope).unwrap(),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn two_sided_jumps_leave_i_empty() {
        let lc = slice(&[0.02], &[&[0.0]], &[(&[0.1], 0.6), (&[-0.1], 0.4)], SupportEnvelope::Bounded);
        let report = cone_report(&lc).unwrap();
        assert!(report.witness.is_none());
        assert!(report.drift_optimum.abs() <= 1e-9);
        assert!(report.face_positivity.abs() <= 1e-9);
        assert!(report.null_space_basis.is_empty());
    }

    #[test]
    fn full_rank_diffusion_blocks_arbitrage() {
        let lc = slice(&[0.02], &[&[0.04]], &[], SupportEnvelope::Bounded);
        let report = cone_report(&lc).unwrap();
        assert!(report.witness.is_none());
        assert!(report.null_space_basis.is_empty());
    }

    #[test]
    fn one_sided_jump_with_drift_is_immediate_arbitrage() {
        let lc = slice(&[0.1], &[&[0.0]], &[(&[3.0], 0.02)], SupportEnvelope::Bounded);
        let w = find_immediate_arbitrage(&lc).unwrap().expect("witness");
        assert!((w.direction[0] - 1.0).abs() < 1e-10);
        assert!((w.drift_margin - 0.1).abs() < 1e-9);
        assert!(w.cone_slack >= -1e-12);
        assert!(w.c_residual <= 1e-10);
        assert!(w.evidence > 1.0);
    }

    #[test]
    fn zero_drift_one_sided_jump_found_on_face_sweep() {
        let lc = slice(&[0.0], &[&[0.0]], &[(&[2.0], 0.5)], SupportEnvelope::Bounded);
        let report = cone_report(&lc).unwrap();
        let w = report.witness.expect("witness");
        assert!(w.drift_margin.abs() <= 1e-9);
        assert!(w.evidence > 1.0);
        assert!(report.face_positivity > 1.0);
    }

    #[test]
    fn witness_has_no_null_component() {
        let lc = slice(
            &[0.0, 0.0],
            &[&[0.0, 0.0], &[0.0, 0.0]],
            &[(&[2.0, 0.0], 0.5)],
            SupportEnvelope::Bounded,
        );
        let w = find_immediate_arbitrage(&lc).unwrap().expect("witness");
        assert!((w.direction[0] - 1.0).abs() < 1e-10);
        assert!(w.direction[1].abs() < 1e-10);
    }

    #[test]
    fn diffusion_kernel_drift_is_found() {
        let lc = slice(
            &[0.0, 0.3],
            &[&[1.0, 0.0], &[0.0, 0.0]],
            &[],
            SupportEnvelope::Bounded,
        );
        let w = find_immediate_arbitrage(&lc).unwrap().expect("witness");
        assert!(w.direction[0].abs() < 1e-10);
        assert!((w.direction[1] - 1.0).abs() < 1e-10);
        assert!((w.drift_margin - 0.3).abs() < 1e-9);
        assert!(w.c_residual <= 1e-10);
    }

    #[test]
    fn unbounded_envelope_disables_arbitrage() {
        let lc = slice(&[5.0], &[&[0.0]], &[(&[3.0], 0.02)], SupportEnvelope::UnboundedAllDirections);
        assert!(find_immediate_arbitrage(&lc).unwrap().is_none());
    }

    #[test]
    fn null_space_of_degenerate_slice() {
        let lc = slice(
            &[0.1, 0.0],
            &[&[0.0, 0.0], &[0.0, 0.0]],
            &[(&[1.0, 0.0], 0.5)],
            SupportEnvelope::Bounded,
        );
        let basis = null_space(&lc);
        assert_eq!(basis.len(), 1);
        assert!(basis[0][0].abs() < 1e-12);
        assert!((basis[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_featureless_slice_is_everything() {
        let lc = slice(&[0.0, 0.0], &[&[0.0, 0.0], &[0.0, 0.0]], &[], SupportEnvelope::Bounded);
        let basis = null_space(&lc);
        assert_eq!(basis.len(), 2);
        assert_eq!(basis[0][0], 1.0);
        assert_eq!(basis[1][1], 1.0);
    }

    #[test]
    fn admissible_cone_membership() {
        let lc = slice(&[0.02], &[&[0.0]], &[(&[0.1], 0.6), (&[-0.1], 0.4)], SupportEnvelope::Bounded);
        let p = |v: f64| DVector::from_row_slice(&[v]);
        assert!(in_admissible_cone(&lc, &p(2.0)).unwrap());
        assert!(in_admissible_cone(&lc, &p(10.0)).unwrap()); // hits -1 exactly
        assert!(!in_admissible_cone(&lc, &p(10.5)).unwrap());
        assert!(in_admissible_cone(&lc, &p(-10.0)).unwrap());
        assert!(!in_admissible_cone(&lc, &p(-11.0)).unwrap());

        let unb = slice(&[0.0], &[&[0.0]], &[(&[0.1], 0.5)], SupportEnvelope::UnboundedAllDirections);
        assert!(in_admissible_cone(&unb, &p(0.0)).unwrap());
        assert!(!in_admissible_cone(&unb, &p(1e-9)).unwrap());
    }

    #[test]
    fn residual_drift_subtracts_small_jump_mean() {
        let lc = slice(&[0.02], &[&[0.0]], &[(&[0.1], 0.6), (&[-0.1], 0.4)], SupportEnvelope::Bounded);
        let p = DVector::from_row_slice(&[1.0]);
        assert!(residual_drift(&lc, &p).abs() < 1e-15);
        let lc = slice(&[0.1], &[&[0.0]], &[(&[3.0], 0.02)], SupportEnvelope::Bounded);
        assert!((residual_drift(&lc, &p) - 0.1).abs() < 1e-15);
    }
}

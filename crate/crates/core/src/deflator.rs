//! Local martingale deflators by measure rebalancing.
//!
//! The pipeline runs in five stages. First the market is rewritten in units
//! of the numeraire wealth: each asset (and the money account) divided by
//! V* gives the changed process X' whose drift vanishes wherever jumps stay
//! small. Second, at sites where the changed jumps exceed the truncation
//! radius (the set D), the tail of ν' is shifted by β·b' into a measure F
//! whose barycenter captures the leftover drift. Third, F is reweighted to
//! a zero-barycenter measure F̌ of minimal total variation distance, giving
//! a strictly positive density U on the tail. Fourth, the density drives a
//! multiplicative exponential E(M) whose per-step compensator vanishes by
//! mass preservation. Finally ξ = E(M)/V* is the candidate deflator, and
//! every claim about it is checked by exact conditional expectations.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::characteristics::{CharacteristicGrid, LocalCharacteristic, TRUNCATION_RADIUS};
use crate::error::{Error, Result};
use crate::gen;
use crate::lattice::{
    one_step_expectation_check, BranchWire, LatticeModel, LatticeWire, NodeWire, ProbWire,
    ProcessOnLattice,
};
use crate::lp::{LpOutcome, LpProblem};
use crate::measure::DiscreteMeasure;
use crate::numeraire::{solve_lattice, LatticeSolve, SolveStatus, SolverOptions};

/// Off the jump-tail set D, a genuine numeraire change leaves no drift.
pub const OFF_D_DRIFT_TOL: f64 = 1e-10;
/// Largest tolerated positive value of π·barycenter(F) over admissible π.
pub const HYPOTHESIS_TOL: f64 = 1e-10;
/// The reweighted characteristic must have zero drift rate up to rounding.
pub const DRIFT_RESIDUAL_TOL: f64 = 1e-10;
/// The rebalance lemma promises total variation at most one.
pub const TV_BUDGET: f64 = 1.0 + 1e-12;
/// Per-step compensator of M; zero in exact arithmetic.
pub const COMPENSATOR_TOL: f64 = 1e-14;

const DENSITY_FLOOR: f64 = 1e-6;
const DENSITY_FLOOR_MIN: f64 = 1e-12;

/// A measure F together with its zero-barycenter reweighting F̌ and the
/// density dF̌/dF on the shared atom set.
#[derive(Debug, Clone, PartialEq)]
pub struct RebalancedMeasure {
    pub original: DiscreteMeasure,
    pub rebalanced: DiscreteMeasure,
    /// dF̌/dF per atom, aligned with `original.atoms()`; strictly positive.
    pub density: Vec<f64>,
    /// Σ|w̌ᵢ - wᵢ|, the total variation distance between the two measures.
    pub tv: f64,
}

impl RebalancedMeasure {
    /// Density value at an atom of the original measure, matched bitwise.
    pub fn density_at(&self, point: &DVector<f64>) -> Option<f64> {
        self.original
            .atoms()
            .iter()
            .position(|a| same_point(&a.point, point))
            .map(|i| self.density[i])
    }
}

fn same_point(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b.iter())
            .all(|(x, y)| (x + 0.0).to_bits() == (y + 0.0).to_bits())
}

/// The density U evaluated on the jump tail of one slice: U(x) > 0 for tail
/// atoms, and implicitly 0 everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityTable {
    entries: Vec<(DVector<f64>, f64)>,
}

impl DensityTable {
    pub fn new(entries: Vec<(DVector<f64>, f64)>) -> Self {
        Self { entries }
    }

    /// U(x); zero for points off the recorded tail.
    pub fn value_at(&self, x: &DVector<f64>) -> f64 {
        self.entries
            .iter()
            .find(|(p, _)| same_point(p, x))
            .map(|&(_, u)| u)
            .unwrap_or(0.0)
    }

    pub fn entries(&self) -> &[(DVector<f64>, f64)] {
        &self.entries
    }
}

/// Outcome of testing whether every admissible direction sees a nonpositive
/// mean jump of F; a violation comes with the offending direction.
#[derive(Debug, Clone, PartialEq)]
pub struct CrucialCheck {
    pub holds: bool,
    /// max over admissible π (unit box) of π·barycenter(F).
    pub worst_value: f64,
    pub witness: Option<DVector<f64>>,
}

/// Semantic defects found while assembling or checking a deflator. These
/// are reportable outcomes, not execution errors: the pipeline keeps going
/// where it meaningfully can. `site` is a lattice node id or a grid slice
/// index.
#[derive(Debug, Clone, PartialEq)]
pub enum Finding {
    UnsolvedSite { site: usize, reason: String },
    OffDDrift { site: usize, value: f64 },
    HypothesisViolated { site: usize, value: f64, witness: Vec<f64> },
    RebalanceInfeasible { site: usize, floor: f64 },
    TvBudgetExceeded { site: usize, tv: f64 },
    DriftResidual { site: usize, residual: f64 },
    CompensatorResidual { site: usize, value: f64 },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::UnsolvedSite { site, reason } => {
                write!(f, "site {site}: growth program unsolved ({reason})")
            }
            Finding::OffDDrift { site, value } => {
                write!(f, "site {site}: off-D drift rate {value:.3e} exceeds {OFF_D_DRIFT_TOL:.0e}")
            }
            Finding::HypothesisViolated { site, value, witness } => write!(
                f,
                "site {site}: admissible direction {witness:?} sees positive mean jump {value:.3e}"
            ),
            Finding::RebalanceInfeasible { site, floor } => write!(
                f,
                "site {site}: no zero-barycenter reweighting above density floor {floor:.0e}"
            ),
            Finding::TvBudgetExceeded { site, tv } => {
                write!(f, "site {site}: rebalance total variation {tv} exceeds 1")
            }
            Finding::DriftResidual { site, residual } => {
                write!(f, "site {site}: reweighted drift residual {residual:.3e} exceeds {DRIFT_RESIDUAL_TOL:.0e}")
            }
            Finding::CompensatorResidual { site, value } => {
                write!(f, "site {site}: exponential compensator {value:.3e} exceeds {COMPENSATOR_TOL:.0e}")
            }
        }
    }
}

/// Rewrites a lattice in units of the wealth generated by the per-node
/// proportions `rho`: component 0 is the deflated money account, components
/// 1..=d the deflated assets, with branch jumps
/// ΔX'ᵢ = (1 + ΔXᵢ)/(1 + ρ'ΔX) - 1 (numerator 1 for component 0).
/// Node ids of the changed lattice coincide with the original's.
pub fn numeraire_change_lattice(
    model: &LatticeModel,
    rho: &[DVector<f64>],
) -> Result<LatticeModel> {
    // surfaces a nonpositive wealth factor with its location before any
    // branch arithmetic happens
    model.wealth_path(rho)?;
    let dim = model.dim();

    fn build(model: &LatticeModel, id: usize, rho: &[DVector<f64>]) -> NodeWire {
        let node = model.node(id);
        let branches = node
            .branches
            .iter()
            .map(|b| {
                let denom = 1.0 + rho[id].dot(&b.jump);
                let mut dx = Vec::with_capacity(b.jump.len() + 1);
                dx.push(1.0 / denom - 1.0);
                for i in 0..b.jump.len() {
                    dx.push((1.0 + b.jump[i]) / denom - 1.0);
                }
                BranchWire {
                    p: match b.exact {
                        Some((n, d)) => ProbWire::Ratio(format!("{n}/{d}")),
                        None => ProbWire::Real(b.probability),
                    },
                    dx,
                    child: build(model, b.child, rho),
                }
            })
            .collect();
        NodeWire { branches, d_g: node.d_g }
    }

    let mut s0 = Vec::with_capacity(dim + 1);
    s0.push(1.0);
    s0.extend(model.s0().iter().copied());
    LatticeModel::from_wire(LatticeWire {
        dim: dim + 1,
        s0,
        root: build(model, 0, rho),
    })
}

/// The tail data of one changed slice: `None` when no jump exceeds the
/// truncation radius (the slice is off D), else β = 1/tail-mass and the
/// tail shifted by β·b'.
pub fn compute_d_and_f(lc: &LocalCharacteristic) -> Option<(f64, DiscreteMeasure)> {
    let (tail_mass, tail) = lc.nu().tail_beyond_radius(TRUNCATION_RADIUS);
    if tail_mass == 0.0 {
        return None;
    }
    let beta = 1.0 / tail_mass;
    let shift = lc.b() * beta;
    let f = tail
        .convolve_dirac(&shift)
        .expect("tail and drift share the slice dimension");
    Some((beta, f))
}

/// |b'| of a slice off D within the horizon, where a genuine numeraire
/// change forces the drift rate to vanish. Beyond the horizon nothing is
/// required and the check value is 0.
pub fn off_d_drift_check(lc: &LocalCharacteristic, within_horizon: bool) -> f64 {
    if within_horizon {
        lc.b().norm()
    } else {
        0.0
    }
}

/// Maximises π·barycenter(F) over the admissible directions
/// {π : π·z ≥ -1 at every atom, |π|∞ ≤ 1}. Under an envelope that is
/// unbounded in all directions the admissible set collapses to the origin
/// and the condition holds vacuously.
pub fn check_crucial_hypothesis(f: &DiscreteMeasure) -> Result<CrucialCheck> {
    if f.envelope() == crate::measure::SupportEnvelope::UnboundedAllDirections {
        return Ok(CrucialCheck { holds: true, worst_value: 0.0, witness: None });
    }
    let d = f.dim();
    let bar = f.barycenter();
    let mut lp = LpProblem::maximize(bar.as_slice());
    lp.set_all_bounds(-1.0, 1.0);
    for a in f.atoms() {
        lp.ge(a.point.as_slice(), -1.0);
    }
    match lp.solve()? {
        LpOutcome::Optimal(sol) => {
            let holds = sol.objective <= HYPOTHESIS_TOL;
            Ok(CrucialCheck {
                holds,
                worst_value: sol.objective,
                witness: if holds {
                    None
                } else {
                    Some(DVector::from_vec(sol.x[..d].to_vec()))
                },
            })
        }
        _ => Err(Error::Internal(
            "direction program is feasible at the origin and box-bounded".into(),
        )),
    }
}

/// Reweights F to the zero-barycenter measure F̌ on the same atoms that is
/// closest in total variation, with mass preserved and every new weight
/// held strictly positive by a floor δ·wᵢ (δ relaxed from 1e-6 down to
/// 1e-12 if needed). Among tv-optimal solutions the lexicographically
/// smallest weight vector is selected, then the equality constraints are
/// polished by a least-squares projection.
pub fn rebalance(f: &DiscreteMeasure) -> Result<RebalancedMeasure> {
    let atoms = f.atoms();
    let k = atoms.len();
    let d = f.dim();
    if k == 0 {
        return Err(Error::InvalidMeasure("cannot rebalance an empty measure".into()));
    }
    let weights: Vec<f64> = atoms.iter().map(|a| a.weight).collect();
    let mass = f.mass();

    // variables: w̌ (k) then u (k) with u_i ≥ |w̌_i - w_i|
    let build_base = |costs: &[f64], floor: f64| -> LpProblem {
        let mut lp = LpProblem::minimize(costs);
        for (i, &w) in weights.iter().enumerate() {
            lp.set_bounds(i, floor * w, f64::INFINITY);
            lp.set_bounds(k + i, 0.0, f64::INFINITY);
            let mut row = vec![0.0; 2 * k];
            row[i] = -1.0;
            row[k + i] = 1.0;
            lp.ge(&row, -w);
            row[i] = 1.0;
            lp.ge(&row, w);
        }
        let mut ones = vec![0.0; 2 * k];
        for x in ones[..k].iter_mut() {
            *x = 1.0;
        }
        lp.eq(&ones, mass);
        for j in 0..d {
            let mut row = vec![0.0; 2 * k];
            for (i, a) in atoms.iter().enumerate() {
                row[i] = a.point[j];
            }
            lp.eq(&row, 0.0);
        }
        lp
    };

    let tv_costs = {
        let mut c = vec![0.0; 2 * k];
        for x in c[k..].iter_mut() {
            *x = 1.0;
        }
        c
    };

    let mut floor = DENSITY_FLOOR;
    let first = loop {
        match build_base(&tv_costs, floor).solve()? {
            LpOutcome::Optimal(sol) => break sol,
            LpOutcome::Infeasible => {
                floor *= 0.5;
                if floor < DENSITY_FLOOR_MIN {
                    return Err(Error::LpFailure(format!(
                        "no mass-preserving zero-barycenter reweighting above floor {DENSITY_FLOOR_MIN:.0e}"
                    )));
                }
            }
            LpOutcome::Unbounded => {
                return Err(Error::Internal("nonnegative objective cannot be unbounded".into()))
            }
        }
    };
    let tv_opt: f64 = first.x[k..].iter().sum();
    let budget = tv_opt + 1e-9 * tv_opt.max(1.0);

    // lexicographic tie-break among tv-optimal weight vectors
    let mut chosen = first.x[..k].to_vec();
    'cascade: {
        let mut fixed: Vec<f64> = Vec::new();
        for i in 0..k {
            let mut costs = vec![0.0; 2 * k];
            costs[i] = 1.0;
            let mut lp = build_base(&costs, floor);
            lp.le(&tv_costs, budget);
            for (j, &v) in fixed.iter().enumerate() {
                let pad = 1e-10 * v.abs().max(1.0);
                lp.set_bounds(j, v - pad, v + pad);
            }
            match lp.solve()? {
                LpOutcome::Optimal(sol) => fixed.push(sol.x[i]),
                _ => break 'cascade,
            }
        }
        chosen = fixed;
    }

    // least-squares polish of the equality constraints
    let a = {
        let mut m = DMatrix::zeros(d + 1, k);
        for i in 0..k {
            m[(0, i)] = 1.0;
            for j in 0..d {
                m[(j + 1, i)] = atoms[i].point[j];
            }
        }
        m
    };
    let mut target = DVector::zeros(d + 1);
    target[0] = mass;
    let v = DVector::from_vec(chosen);
    let gram = &a * a.transpose();
    let svd = gram.svd(true, true);
    let rank_eps = 1e-12 * svd.singular_values.max().max(1.0);
    let polished = match svd.solve(&(&target - &a * &v), rank_eps) {
        Ok(mult) => {
            let cand = &v + a.transpose() * &mult;
            if cand.iter().all(|&x| x > 0.0) {
                cand
            } else {
                v
            }
        }
        Err(_) => v,
    };

    let mut density = Vec::with_capacity(k);
    let mut tv = 0.0;
    let mut new_atoms = Vec::with_capacity(k);
    for (i, atom) in atoms.iter().enumerate() {
        let w = polished[i];
        if w <= 0.0 {
            return Err(Error::Internal(format!(
                "rebalanced weight {w} at atom {i} lost positivity"
            )));
        }
        density.push(w / atom.weight);
        tv += (w - atom.weight).abs();
        new_atoms.push(crate::measure::Atom { point: atom.point.clone(), weight: w });
    }
    let rebalanced = DiscreteMeasure::new(d, new_atoms, f.envelope())?;
    Ok(RebalancedMeasure { original: f.clone(), rebalanced, density, tv })
}

/// The tail density of one slice: U(x) = p(x + β·b') for each atom of ν'
/// beyond the truncation radius, where p is the rebalance density.
pub fn density_u(
    lc: &LocalCharacteristic,
    beta: f64,
    reb: &RebalancedMeasure,
) -> Result<DensityTable> {
    let shift = lc.b() * beta;
    let mut entries = Vec::new();
    for a in lc.nu().atoms() {
        if a.point.norm() > TRUNCATION_RADIUS {
            let y = &a.point + &shift;
            let p = reb.density_at(&y).ok_or_else(|| {
                Error::Internal(format!("no density entry for shifted tail point {y}"))
            })?;
            entries.push((a.point.clone(), p));
        }
    }
    Ok(DensityTable::new(entries))
}

/// Applies the tail density to a slice: tail weights become wᵢ·U(xᵢ), small
/// jumps and the continuous part stay put. Returns the new slice and the
/// norm of its drift rate, which vanishes exactly when the density came
/// from a zero-barycenter rebalance. With no table the slice passes through
/// and the residual is the drift rate it already had.
pub fn new_characteristic(
    lc: &LocalCharacteristic,
    table: Option<&DensityTable>,
) -> Result<(LocalCharacteristic, f64)> {
    let new_lc = match table {
        None => lc.clone(),
        Some(t) => {
            let factors: Vec<f64> = lc
                .nu()
                .atoms()
                .iter()
                .map(|a| {
                    if a.point.norm() > TRUNCATION_RADIUS {
                        t.value_at(&a.point)
                    } else {
                        1.0
                    }
                })
                .collect();
            if factors.iter().any(|&f| f <= 0.0) {
                return Err(Error::Internal(
                    "tail atom without a positive density entry".into(),
                ));
            }
            let nu = lc.nu().reweighted(&factors)?;
            LocalCharacteristic::new(lc.b().clone(), lc.c().clone(), nu, lc.d_g())?
        }
    };
    let residual = new_lc.drift_rate().norm();
    Ok((new_lc, residual))
}

/// The stochastic exponential E(M) of the reweighting martingale, together
/// with cumulative bookkeeping per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialDensity {
    pub em: ProcessOnLattice,
    /// Cumulative Σ dG·∫|U - 1{|x|>1}| dν' along the path to each node.
    pub lepingle: ProcessOnLattice,
    /// Cumulative Σ dG along the path to each node.
    pub g_cum: ProcessOnLattice,
    pub max_compensator: f64,
    /// Largest per-slice total variation rate ∫|U - 1{|x|>1}| dν'.
    pub max_tv: f64,
}

/// Accumulates E(M) over a changed lattice: at an in-D node (one with a
/// density table) each branch with jump x multiplies wealth by
/// 1 + U(x) - 1{|x|>1} - compensator·dG, where the compensator
/// ∫(U - 1{|x|>1})dν' vanishes by mass preservation; off-D nodes pass
/// through unchanged.
pub fn exponential_density(
    model: &LatticeModel,
    tables: &[Option<DensityTable>],
) -> Result<ExponentialDensity> {
    let n = model.num_nodes();
    if tables.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: tables.len() });
    }
    let mut em = vec![0.0; n];
    let mut lepingle = vec![0.0; n];
    let mut g_cum = vec![0.0; n];
    em[0] = 1.0;
    let mut max_compensator = 0.0f64;
    let mut max_tv = 0.0f64;
    for id in 0..n {
        let node = model.node(id);
        if node.is_leaf() {
            continue;
        }
        let (compensator_rate, tv_rate) = match &tables[id] {
            Some(table) => {
                let lc = model.node_characteristic(id)?;
                let mut comp = 0.0;
                let mut tv = 0.0;
                for a in lc.nu().atoms() {
                    let w_val = branch_w(table, &a.point);
                    comp += a.weight * w_val;
                    tv += a.weight * w_val.abs();
                }
                (comp, tv)
            }
            None => (0.0, 0.0),
        };
        let offset = compensator_rate * node.d_g;
        max_compensator = max_compensator.max(offset.abs());
        max_tv = max_tv.max(tv_rate);
        for b in &node.branches {
            let w_val = match &tables[id] {
                Some(table) => branch_w(table, &b.jump),
                None => 0.0,
            };
            let factor = 1.0 + w_val - offset;
            if factor <= 0.0 {
                return Err(Error::Internal(format!(
                    "exponential factor {factor} at node {id} is nonpositive"
                )));
            }
            em[b.child] = em[id] * factor;
            lepingle[b.child] = lepingle[id] + node.d_g * tv_rate;
            g_cum[b.child] = g_cum[id] + node.d_g;
        }
    }
    Ok(ExponentialDensity { em, lepingle, g_cum, max_compensator, max_tv })
}

fn branch_w(table: &DensityTable, jump: &DVector<f64>) -> f64 {
    let indicator = if jump.norm() > TRUNCATION_RADIUS { 1.0 } else { 0.0 };
    table.value_at(jump) - indicator
}

/// ξ = E(M)/V*, nodewise.
pub fn assemble_deflator(em: &[f64], v_star: &[f64]) -> Result<ProcessOnLattice> {
    if em.len() != v_star.len() {
        return Err(Error::DimensionMismatch { expected: v_star.len(), got: em.len() });
    }
    em.iter()
        .zip(v_star.iter())
        .map(|(&e, &v)| {
            if v <= 0.0 {
                return Err(Error::Domain(format!("numeraire wealth {v} is not positive")));
            }
            Ok(e / v)
        })
        .collect()
}

/// One strategy's worst deviation from the martingale identity.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyViolation {
    pub strategy: usize,
    pub node: usize,
    pub violation: f64,
}

/// Result of checking ξ·(wealth of H) against exact one-step expectations
/// for a family of strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub max_violation: f64,
    pub per_strategy: Vec<StrategyViolation>,
}

impl VerifyReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// The canonical strategy sample: doing nothing, one scaled buy-and-hold
/// per asset, and seeded random admissible holdings.
pub fn standard_strategies(
    model: &LatticeModel,
    seed: u64,
    random_count: usize,
) -> Vec<Vec<DVector<f64>>> {
    let d = model.dim();
    let n = model.num_nodes();
    let mut out = vec![vec![DVector::zeros(d); n]];
    for i in 0..d {
        let mut h = DVector::zeros(d);
        h[i] = 1.0 / model.s0()[i];
        out.push(vec![h; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_count {
        out.push(gen::random_admissible_holdings(&mut rng, model));
    }
    out
}

/// Checks that ξ deflates every sampled strategy's wealth to a martingale:
/// for each H the process ξ·(1 + Σ H'ΔS) must satisfy the exact one-step
/// conditional expectation identity at every internal node.
pub fn verify_deflator(
    model: &LatticeModel,
    xi: &ProcessOnLattice,
    strategies: &[Vec<DVector<f64>>],
) -> Result<VerifyReport> {
    let n = model.num_nodes();
    if xi.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: xi.len() });
    }
    if let Some(&bad) = xi.iter().find(|&&z| z <= 0.0 || !z.is_finite()) {
        return Err(Error::Domain(format!("deflator value {bad} is not positive")));
    }
    let prices = model.price_table();
    let mut per_strategy = Vec::with_capacity(strategies.len());
    let mut max_violation = 0.0f64;
    for (sid, h) in strategies.iter().enumerate() {
        if h.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: h.len() });
        }
        let mut value = vec![0.0; n];
        value[0] = 1.0;
        for id in 0..n {
            let node = model.node(id);
            for b in &node.branches {
                let gains = h[id].dot(&(&prices[b.child] - &prices[id]));
                value[b.child] = value[id] + gains;
            }
        }
        let deflated: Vec<f64> = xi.iter().zip(&value).map(|(&z, &v)| z * v).collect();
        let check = one_step_expectation_check(model, &deflated)?;
        max_violation = max_violation.max(check.max_abs_gap);
        per_strategy.push(StrategyViolation {
            strategy: sid,
            node: check.worst_gap_node,
            violation: check.max_abs_gap,
        });
    }
    Ok(VerifyReport { max_violation, per_strategy })
}

/// Everything the pipeline derives at one site (lattice node or grid
/// slice).
#[derive(Debug, Clone)]
pub struct SliceDeflation {
    pub in_d: bool,
    pub beta: Option<f64>,
    pub crucial: Option<CrucialCheck>,
    pub rebalanced: Option<RebalancedMeasure>,
    pub u_table: Option<DensityTable>,
    /// Drift rate of the slice after reweighting (off D: as it stands).
    pub zero_drift_residual: f64,
}

fn deflate_slice(lc: &LocalCharacteristic, site: usize) -> Result<(SliceDeflation, Vec<Finding>)> {
    let mut findings = Vec::new();
    let Some((beta, f)) = compute_d_and_f(lc) else {
        let drift = off_d_drift_check(lc, true);
        if drift > OFF_D_DRIFT_TOL {
            findings.push(Finding::OffDDrift { site, value: drift });
        }
        let (_, residual) = new_characteristic(lc, None)?;
        return Ok((
            SliceDeflation {
                in_d: false,
                beta: None,
                crucial: None,
                rebalanced: None,
                u_table: None,
                zero_drift_residual: residual,
            },
            findings,
        ));
    };

    let crucial = check_crucial_hypothesis(&f)?;
    if !crucial.holds {
        findings.push(Finding::HypothesisViolated {
            site,
            value: crucial.worst_value,
            witness: crucial
                .witness
                .as_ref()
                .map(|w| w.iter().copied().collect())
                .unwrap_or_default(),
        });
    }

    match rebalance(&f) {
        Ok(reb) => {
            if reb.tv > TV_BUDGET {
                findings.push(Finding::TvBudgetExceeded { site, tv: reb.tv });
            }
            let table = density_u(lc, beta, &reb)?;
            let (_, residual) = new_characteristic(lc, Some(&table))?;
            if residual > DRIFT_RESIDUAL_TOL {
                findings.push(Finding::DriftResidual { site, residual });
            }
            Ok((
                SliceDeflation {
                    in_d: true,
                    beta: Some(beta),
                    crucial: Some(crucial),
                    rebalanced: Some(reb),
                    u_table: Some(table),
                    zero_drift_residual: residual,
                },
                findings,
            ))
        }
        Err(Error::LpFailure(_)) => {
            findings.push(Finding::RebalanceInfeasible { site, floor: DENSITY_FLOOR_MIN });
            let (_, residual) = new_characteristic(lc, None)?;
            Ok((
                SliceDeflation {
                    in_d: true,
                    beta: Some(beta),
                    crucial: Some(crucial),
                    rebalanced: None,
                    u_table: None,
                    zero_drift_residual: residual,
                },
                findings,
            ))
        }
        Err(e) => Err(e),
    }
}

/// The full per-lattice deflator construction and its diagnostics. `xi` is
/// present exactly when every node solved and every in-D node rebalanced.
#[derive(Debug, Clone)]
pub struct LatticeDeflation {
    pub solve: LatticeSolve,
    pub changed: Option<LatticeModel>,
    pub per_node: Vec<Option<SliceDeflation>>,
    pub em: Option<ExponentialDensity>,
    pub v_star: Option<ProcessOnLattice>,
    pub xi: Option<ProcessOnLattice>,
    pub findings: Vec<Finding>,
}

/// Runs the whole pipeline on a lattice: growth solves at every node,
/// numeraire change, tail rebalancing, exponential density, ξ = E(M)/V*.
/// Semantic defects are collected as findings; the deflator is assembled
/// whenever the construction goes through.
pub fn deflate_lattice(model: &LatticeModel, opts: &SolverOptions) -> Result<LatticeDeflation> {
    let solve = solve_lattice(model, opts)?;
    let mut findings = Vec::new();
    if !solve.all_solved {
        for (id, s) in solve.per_node.iter().enumerate() {
            if let Some(s) = s {
                if s.status != SolveStatus::Solved {
                    findings.push(Finding::UnsolvedSite {
                        site: id,
                        reason: match s.status {
                            SolveStatus::NoSolutionImmediateArbitrage => {
                                "immediate arbitrage".to_string()
                            }
                            SolveStatus::Unbounded => "unbounded growth".to_string(),
                            SolveStatus::Solved => unreachable!(),
                        },
                    });
                }
            }
        }
        return Ok(LatticeDeflation {
            solve,
            changed: None,
            per_node: Vec::new(),
            em: None,
            v_star: None,
            xi: None,
            findings,
        });
    }

    let path = solve.path.as_ref().expect("all nodes solved");
    let changed = numeraire_change_lattice(model, &path.proportions)?;
    let n = changed.num_nodes();
    let mut per_node: Vec<Option<SliceDeflation>> = vec![None; n];
    let mut tables: Vec<Option<DensityTable>> = vec![None; n];
    let mut complete = true;
    for id in changed.internal_nodes().collect::<Vec<_>>() {
        let lc = changed.node_characteristic(id)?;
        let (deflation, mut site_findings) = deflate_slice(&lc, id)?;
        findings.append(&mut site_findings);
        if deflation.in_d {
            match &deflation.u_table {
                Some(t) => tables[id] = Some(t.clone()),
                None => complete = false,
            }
        }
        per_node[id] = Some(deflation);
    }

    let (em, xi) = if complete {
        let em = exponential_density(&changed, &tables)?;
        if em.max_compensator > COMPENSATOR_TOL {
            findings.push(Finding::CompensatorResidual { site: 0, value: em.max_compensator });
        }
        let xi = assemble_deflator(&em.em, &path.wealth)?;
        (Some(em), Some(xi))
    } else {
        (None, None)
    };

    let v_star = Some(path.wealth.clone());
    Ok(LatticeDeflation {
        solve,
        changed: Some(changed),
        per_node,
        em,
        v_star,
        xi,
        findings,
    })
}

/// The pointwise pipeline for a grid whose slices are already expressed in
/// numeraire units: each active slice is deflated on its own, slices beyond
/// the horizon pass through untouched.
#[derive(Debug, Clone)]
pub struct GridDeflation {
    pub per_slice: Vec<Option<SliceDeflation>>,
    /// The reweighted slice for every index (untouched beyond the horizon).
    pub new_characteristics: Vec<LocalCharacteristic>,
    pub findings: Vec<Finding>,
    /// Σ dG·tv over the active in-D slices.
    pub lepingle_total: f64,
    /// Σ dG over the active slices.
    pub g_total: f64,
}

pub fn deflate_grid(grid: &CharacteristicGrid) -> Result<GridDeflation> {
    let mut per_slice = Vec::with_capacity(grid.len());
    let mut new_characteristics = Vec::with_capacity(grid.len());
    let mut findings = Vec::new();
    let mut lepingle_total = 0.0;
    let mut g_total = 0.0;
    for (i, lc) in grid.slices().iter().enumerate() {
        if i > grid.horizon_index() {
            per_slice.push(None);
            new_characteristics.push(lc.clone());
            continue;
        }
        let (deflation, mut site_findings) = deflate_slice(lc, i)?;
        findings.append(&mut site_findings);
        let table = deflation.u_table.as_ref();
        let (new_lc, _) = new_characteristic(lc, table)?;
        if let Some(reb) = &deflation.rebalanced {
            lepingle_total += lc.d_g() * reb.tv;
        }
        g_total += lc.d_g();
        per_slice.push(Some(deflation));
        new_characteristics.push(new_lc);
    }
    Ok(GridDeflation {
        per_slice,
        new_characteristics,
        findings,
        lepingle_total,
        g_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::parse_lattice;
    use crate::measure::{Atom, SupportEnvelope};
    use approx::assert_relative_eq;

    fn measure_1d(atoms: &[(f64, f64)], envelope: SupportEnvelope) -> DiscreteMeasure {
        let atoms: Vec<Atom> = atoms
            .iter()
            .map(|&(z, w)| Atom { point: DVector::from_element(1, z), weight: w })
            .collect();
        DiscreteMeasure::new(1, atoms, envelope).unwrap()
    }

    fn worked_slice() -> LocalCharacteristic {
        let nu = measure_1d(
            &[(2.0, 0.3), (-4.0, 0.5), (0.1, 0.2)],
            SupportEnvelope::UnboundedAllDirections,
        );
        LocalCharacteristic::new(
            DVector::from_element(1, 0.2),
            DMatrix::zeros(1, 1),
            nu,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn numeraire_change_matches_branch_arithmetic() {
        let model = parse_lattice(crate::lattice::kelly_json()).unwrap();
        let rho = vec![DVector::from_element(1, 2.0); model.num_nodes()];
        let changed = numeraire_change_lattice(&model, &rho).unwrap();
        assert_eq!(changed.dim(), 2);
        assert_eq!(changed.s0(), &DVector::from_vec(vec![1.0, 1.0]));
        let root = changed.node(0);
        let up = &root.branches[0].jump;
        let down = &root.branches[1].jump;
        assert_relative_eq!(up[0], 1.0 / 1.2 - 1.0, epsilon = 1e-15);
        assert_relative_eq!(up[1], 1.1 / 1.2 - 1.0, epsilon = 1e-15);
        assert_relative_eq!(down[0], 1.0 / 0.8 - 1.0, epsilon = 1e-15);
        assert_relative_eq!(down[1], 0.9 / 0.8 - 1.0, epsilon = 1e-15);
        // probabilities and the tree shape survive the change
        assert_eq!(changed.num_nodes(), model.num_nodes());
        assert_eq!(root.branches[0].probability, 0.6);
    }

    #[test]
    fn zero_portfolio_change_is_the_identity_on_assets() {
        let model = parse_lattice(crate::lattice::kelly_json()).unwrap();
        let rho = vec![DVector::zeros(1); model.num_nodes()];
        let changed = numeraire_change_lattice(&model, &rho).unwrap();
        let root = changed.node(0);
        assert_eq!(root.branches[0].jump[0], 0.0);
        assert_relative_eq!(root.branches[0].jump[1], 0.1, epsilon = 1e-15);
        assert_relative_eq!(root.branches[1].jump[1], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn changed_assets_are_exact_martingales_at_the_optimum() {
        let model = parse_lattice(crate::lattice::kelly_json()).unwrap();
        let solve = solve_lattice(&model, &SolverOptions::default()).unwrap();
        let changed =
            numeraire_change_lattice(&model, &solve.path.as_ref().unwrap().proportions).unwrap();
        let prices = changed.price_table();
        for comp in 0..changed.dim() {
            let values: Vec<f64> = prices.iter().map(|s| s[comp]).collect();
            let check = one_step_expectation_check(&changed, &values).unwrap();
            assert!(
                check.is_martingale(1e-12),
                "component {comp} gap {}",
                check.max_abs_gap
            );
        }
    }

    #[test]
    fn d_and_f_worked_values() {
        let (beta, f) = compute_d_and_f(&worked_slice()).unwrap();
        assert_relative_eq!(beta, 1.25, epsilon = 1e-15);
        let points: Vec<f64> = f.atoms().iter().map(|a| a.point[0]).collect();
        let weights: Vec<f64> = f.atoms().iter().map(|a| a.weight).collect();
        assert_eq!(points, vec![2.25, -3.75]);
        assert_eq!(weights, vec![0.3, 0.5]);

        let no_tail = LocalCharacteristic::new(
            DVector::from_element(1, 0.2),
            DMatrix::zeros(1, 1),
            measure_1d(&[(0.1, 0.2)], SupportEnvelope::Bounded),
            1.0,
        )
        .unwrap();
        assert!(compute_d_and_f(&no_tail).is_none());

        let no_drift = LocalCharacteristic::new(
            DVector::zeros(1),
            DMatrix::zeros(1, 1),
            measure_1d(&[(2.0, 0.3)], SupportEnvelope::Bounded),
            1.0,
        )
        .unwrap();
        let (_, f) = compute_d_and_f(&no_drift).unwrap();
        assert_eq!(f.atoms()[0].point[0], 2.0);
    }

    #[test]
    fn off_d_drift_flags_leftover_drift_within_horizon() {
        let lc = LocalCharacteristic::new(
            DVector::from_element(1, 0.05),
            DMatrix::zeros(1, 1),
            DiscreteMeasure::zero(1),
            1.0,
        )
        .unwrap();
        assert_relative_eq!(off_d_drift_check(&lc, true), 0.05, epsilon = 1e-15);
        assert_eq!(off_d_drift_check(&lc, false), 0.0);
    }

    #[test]
    fn crucial_hypothesis_bounded_violation_and_witness() {
        let f = measure_1d(&[(-2.0, 0.4), (3.0, 0.2)], SupportEnvelope::Bounded);
        let check = check_crucial_hypothesis(&f).unwrap();
        assert!(!check.holds);
        assert_relative_eq!(check.worst_value, 1.0 / 15.0, epsilon = 1e-9);
        let w = check.witness.unwrap();
        assert_relative_eq!(w[0], -1.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn crucial_hypothesis_zero_barycenter_holds() {
        let f = measure_1d(&[(-2.0, 0.3), (3.0, 0.2)], SupportEnvelope::Bounded);
        assert_relative_eq!(f.barycenter()[0], 0.0, epsilon = 1e-15);
        assert!(check_crucial_hypothesis(&f).unwrap().holds);
    }

    #[test]
    fn crucial_hypothesis_unbounded_envelope_is_vacuous() {
        let f = measure_1d(&[(-2.0, 0.4), (3.0, 0.2)], SupportEnvelope::UnboundedAllDirections);
        let check = check_crucial_hypothesis(&f).unwrap();
        assert!(check.holds);
        assert_eq!(check.worst_value, 0.0);
    }

    #[test]
    fn rebalance_worked_instance() {
        let f = measure_1d(&[(2.25, 0.3), (-3.75, 0.5)], SupportEnvelope::UnboundedAllDirections);
        let reb = rebalance(&f).unwrap();
        assert_relative_eq!(reb.rebalanced.atoms()[0].weight, 0.5, epsilon = 1e-12);
        assert_relative_eq!(reb.rebalanced.atoms()[1].weight, 0.3, epsilon = 1e-12);
        assert_relative_eq!(reb.tv, 0.4, epsilon = 1e-11);
        assert_relative_eq!(reb.density[0], 5.0 / 3.0, epsilon = 1e-11);
        assert_relative_eq!(reb.density[1], 0.6, epsilon = 1e-11);
        assert_relative_eq!(reb.rebalanced.mass(), f.mass(), epsilon = 1e-14);
        assert!(reb.rebalanced.barycenter().norm() <= 1e-12);
    }

    #[test]
    fn rebalance_unshifted_instance() {
        let f = measure_1d(&[(2.0, 0.3), (-4.0, 0.5)], SupportEnvelope::UnboundedAllDirections);
        let reb = rebalance(&f).unwrap();
        assert_relative_eq!(reb.rebalanced.atoms()[0].weight, 8.0 / 15.0, epsilon = 1e-12);
        assert_relative_eq!(reb.rebalanced.atoms()[1].weight, 4.0 / 15.0, epsilon = 1e-12);
        assert_relative_eq!(reb.tv, 7.0 / 15.0, epsilon = 1e-11);
    }

    #[test]
    fn rebalance_of_a_balanced_measure_is_the_identity() {
        let f = measure_1d(&[(-2.0, 0.3), (3.0, 0.2)], SupportEnvelope::UnboundedAllDirections);
        let reb = rebalance(&f).unwrap();
        assert!(reb.tv <= 1e-12, "tv = {}", reb.tv);
        for p in &reb.density {
            assert_relative_eq!(*p, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn rebalance_single_offcenter_atom_is_infeasible() {
        let f = measure_1d(&[(2.0, 0.5)], SupportEnvelope::UnboundedAllDirections);
        assert!(matches!(rebalance(&f), Err(Error::LpFailure(_))));
    }

    #[test]
    fn random_rebalance_targets_meet_every_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let (f, bound) = gen::random_rebalance_target(&mut rng);
            let reb = rebalance(&f).unwrap();
            assert_relative_eq!(reb.rebalanced.mass(), f.mass(), epsilon = 1e-12);
            assert!(reb.rebalanced.barycenter().norm() <= 1e-12);
            assert!(reb.tv <= bound + 1e-9, "tv {} exceeds feasible bound {bound}", reb.tv);
            assert!(reb.tv <= TV_BUDGET);
            assert!(reb.density.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn shift_back_consistency_of_the_rebalanced_measure() {
        let lc = worked_slice();
        let (beta, f) = compute_d_and_f(&lc).unwrap();
        let reb = rebalance(&f).unwrap();
        let back = reb
            .rebalanced
            .convolve_dirac(&(-(lc.b() * beta)))
            .unwrap();
        let expected = -lc.b();
        assert!((back.barycenter() - expected).norm() <= 1e-10);
    }

    #[test]
    fn density_u_worked_lookups() {
        let lc = worked_slice();
        let (beta, f) = compute_d_and_f(&lc).unwrap();
        let reb = rebalance(&f).unwrap();
        let table = density_u(&lc, beta, &reb).unwrap();
        assert_relative_eq!(table.value_at(&DVector::from_element(1, 2.0)), 5.0 / 3.0, epsilon = 1e-11);
        assert_relative_eq!(table.value_at(&DVector::from_element(1, -4.0)), 0.6, epsilon = 1e-11);
        assert_eq!(table.value_at(&DVector::from_element(1, 0.1)), 0.0);
    }

    #[test]
    fn new_characteristic_zeroes_the_drift() {
        let lc = worked_slice();
        let (beta, f) = compute_d_and_f(&lc).unwrap();
        let reb = rebalance(&f).unwrap();
        let table = density_u(&lc, beta, &reb).unwrap();
        let (new_lc, residual) = new_characteristic(&lc, Some(&table)).unwrap();
        assert!(residual <= 1e-12, "residual = {residual}");
        let tail_weights: Vec<f64> = new_lc
            .nu()
            .atoms()
            .iter()
            .filter(|a| a.point.norm() > 1.0)
            .map(|a| a.weight)
            .collect();
        assert_relative_eq!(tail_weights[0], 0.5, epsilon = 1e-11);
        assert_relative_eq!(tail_weights[1], 0.3, epsilon = 1e-11);

        let (passthrough, residual) = new_characteristic(&lc, None).unwrap();
        assert_eq!(passthrough.nu().atoms().len(), 3);
        assert_relative_eq!(residual, (0.2f64 + 0.6 - 2.0).abs(), epsilon = 1e-12);
    }

    fn single_step_tail_lattice() -> LatticeModel {
        // one node, two large jumps: a hand-held stand-in for a changed
        // lattice with the node in D
        parse_lattice(
            r#"{
                "dim": 1,
                "S0": [1.0],
                "root": {
                    "branches": [
                        {"p": 0.6, "dx": [2.0], "child": {}},
                        {"p": 0.4, "dx": [-0.9], "child": {}}
                    ],
                    "dG": 1.0
                }
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn exponential_density_embedded_worked_values() {
        let model = single_step_tail_lattice();
        // ν' = {(2, 0.6), (-0.9, 0.4)}: tail atom 2 gets U = 1.2, small atom
        // untouched; mass shifted onto the tail is not preserved here, so a
        // compensator appears and is subtracted
        let table = DensityTable::new(vec![(DVector::from_element(1, 2.0), 1.2)]);
        let tables = vec![Some(table), None, None];
        let out = exponential_density(&model, &tables).unwrap();
        // W(2) = 1.2 - 1 = 0.2, W(-0.9) = 0, compensator = 0.6·0.2 = 0.12
        assert_relative_eq!(out.em[1], 1.0 + 0.2 - 0.12, epsilon = 1e-15);
        assert_relative_eq!(out.em[2], 1.0 - 0.12, epsilon = 1e-15);
        assert_relative_eq!(out.max_compensator, 0.12, epsilon = 1e-15);
        assert_relative_eq!(out.lepingle[1], 0.6 * 0.2, epsilon = 1e-15);
        let check = one_step_expectation_check(&model, &out.em).unwrap();
        assert!(check.is_martingale(1e-15));
    }

    #[test]
    fn mass_preserving_table_has_zero_compensator_and_unit_expectation() {
        let model = single_step_tail_lattice();
        // weights: tail 0.6 at jump 2; choose U so 0.6·(U-1) = 0 fails but
        // the mass-preserving choice keeps ∫(U-1{tail})dν' = 0:
        // here the only tail atom forces U = 1
        let table = DensityTable::new(vec![(DVector::from_element(1, 2.0), 1.0)]);
        let tables = vec![Some(table), None, None];
        let out = exponential_density(&model, &tables).unwrap();
        assert_eq!(out.max_compensator, 0.0);
        assert!(out.em.iter().all(|&e| e == 1.0));
    }

    #[test]
    fn two_tail_atoms_with_mass_preserving_density_keep_em_a_martingale() {
        // both jumps beyond the radius; the density (5/3, 0.6) preserves
        // mass (0.375·5/3 + 0.625·0.6 = 1), so the compensator cancels and
        // E(M) has unit one-step expectation
        let model = parse_lattice(
            r#"{
                "dim": 1,
                "S0": [1.0],
                "root": {
                    "branches": [
                        {"p": "3/8", "dx": [2.0], "child": {}},
                        {"p": "5/8", "dx": [1.25], "child": {}}
                    ],
                    "dG": 1.0
                }
            }"#,
        )
        .unwrap();
        let table = DensityTable::new(vec![
            (DVector::from_element(1, 2.0), 5.0 / 3.0),
            (DVector::from_element(1, 1.25), 0.6),
        ]);
        let out = exponential_density(&model, &[Some(table), None, None]).unwrap();
        assert!(out.max_compensator <= COMPENSATOR_TOL);
        assert_relative_eq!(out.em[1], 5.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(out.em[2], 0.6, epsilon = 1e-12);
        assert_relative_eq!(out.max_tv, 0.375 * (2.0 / 3.0) + 0.625 * 0.4, epsilon = 1e-12);
        let check = one_step_expectation_check(&model, &out.em).unwrap();
        assert!(check.is_martingale(1e-15));
    }

    #[test]
    fn assemble_deflator_divides_nodewise() {
        let em = vec![1.0, 1.2, 0.7];
        let v = vec![1.0, 2.0, 0.5];
        let xi = assemble_deflator(&em, &v).unwrap();
        assert_eq!(xi, vec![1.0, 0.6, 1.4]);
        assert!(assemble_deflator(&em, &[1.0]).is_err());
        assert!(assemble_deflator(&em, &[1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn kelly_deflator_end_to_end() {
        let model = parse_lattice(crate::lattice::kelly_json()).unwrap();
        let bundle = deflate_lattice(&model, &SolverOptions::default()).unwrap();
        assert!(bundle.findings.is_empty(), "findings: {:?}", bundle.findings);
        let xi = bundle.xi.as_ref().unwrap();
        assert_eq!(xi[0], 1.0);
        // every node is off D after the change, so E(M) ≡ 1 and ξ = 1/V*
        let em = &bundle.em.as_ref().unwrap().em;
        assert!(em.iter().all(|&e| e == 1.0));
        let v = bundle.v_star.as_ref().unwrap();
        for (z, w) in xi.iter().zip(v.iter()) {
            assert_relative_eq!(*z, 1.0 / w, epsilon = 1e-15);
        }

        let strategies = standard_strategies(&model, 5, 5);
        let report = verify_deflator(&model, xi, &strategies).unwrap();
        assert!(report.max_violation <= 1e-12, "violation {}", report.max_violation);
    }

    #[test]
    fn big_edge_lattice_passes_through_d() {
        // strongly asymmetric one-step market: the growth optimum levers up
        // so far that the changed money-account jump exceeds the truncation
        // radius, putting the node in D with a single tail atom
        let model = parse_lattice(
            r#"{
                "dim": 1,
                "S0": [1.0],
                "root": {
                    "branches": [
                        {"p": 0.9, "dx": [0.1], "child": {}},
                        {"p": 0.1, "dx": [-0.1], "child": {}}
                    ],
                    "dG": 1.0
                }
            }"#,
        )
        .unwrap();
        let bundle = deflate_lattice(&model, &SolverOptions::default()).unwrap();
        assert!(bundle.findings.is_empty(), "findings: {:?}", bundle.findings);
        let deflation = bundle.per_node[0].as_ref().unwrap();
        assert!(deflation.in_d);
        assert!(deflation.zero_drift_residual <= 1e-10);
        let xi = bundle.xi.as_ref().unwrap();
        let strategies = standard_strategies(&model, 7, 5);
        let report = verify_deflator(&model, xi, &strategies).unwrap();
        assert!(report.max_violation <= 1e-10, "violation {}", report.max_violation);
    }

    #[test]
    fn wrong_portfolio_fails_verification() {
        let model = parse_lattice(crate::lattice::kelly_json()).unwrap();
        let rho = vec![DVector::from_element(1, 2.5); model.num_nodes()];
        let wealth = model.wealth_path(&rho).unwrap();
        let fake_xi: Vec<f64> = wealth.iter().map(|&v| 1.0 / v).collect();
        let strategies = standard_strategies(&model, 5, 5);
        let report = verify_deflator(&model, &fake_xi, &strategies).unwrap();
        assert!(report.max_violation >= 1e-4, "violation {}", report.max_violation);
    }

    #[test]
    fn grid_pipeline_on_the_worked_slice() {
        let grid = CharacteristicGrid::new(vec![0.0], vec![worked_slice()], 0).unwrap();
        let out = deflate_grid(&grid).unwrap();
        assert!(out.findings.is_empty(), "findings: {:?}", out.findings);
        let slice = out.per_slice[0].as_ref().unwrap();
        assert!(slice.in_d);
        assert_relative_eq!(slice.beta.unwrap(), 1.25, epsilon = 1e-15);
        assert!(slice.zero_drift_residual <= 1e-12);
        let reb = slice.rebalanced.as_ref().unwrap();
        assert_relative_eq!(reb.tv, 0.4, epsilon = 1e-11);
        assert_relative_eq!(out.lepingle_total, 0.4, epsilon = 1e-11);
        assert_eq!(out.g_total, 1.0);
        assert!(out.lepingle_total <= out.g_total);
    }

    #[test]
    fn grid_pipeline_flags_bounded_envelope_violations() {
        let nu = measure_1d(&[(-2.0, 0.4), (3.0, 0.2)], SupportEnvelope::Bounded);
        let lc = LocalCharacteristic::new(DVector::zeros(1), DMatrix::zeros(1, 1), nu, 1.0).unwrap();
        let grid = CharacteristicGrid::new(vec![0.0], vec![lc], 0).unwrap();
        let out = deflate_grid(&grid).unwrap();
        assert!(out
            .findings
            .iter()
            .any(|f| matches!(f, Finding::HypothesisViolated { site: 0, .. })));
    }

    #[test]
    fn grid_pipeline_flags_off_d_drift() {
        let lc = LocalCharacteristic::new(
            DVector::from_element(1, 0.05),
            DMatrix::zeros(1, 1),
            DiscreteMeasure::zero(1),
            1.0,
        )
        .unwrap();
        let grid = CharacteristicGrid::new(vec![0.0], vec![lc.clone()], 0).unwrap();
        let out = deflate_grid(&grid).unwrap();
        assert!(matches!(out.findings[0], Finding::OffDDrift { site: 0, value } if (value - 0.05).abs() < 1e-15));

        // the same slice beyond the horizon is left alone
        let grid = CharacteristicGrid::new(vec![0.0, 1.0], vec![worked_slice(), lc], 0).unwrap();
        let out = deflate_grid(&grid).unwrap();
        assert!(out.findings.is_empty());
        assert!(out.per_slice[1].is_none());
    }

    #[test]
    fn findings_render_with_their_site() {
        let f = Finding::OffDDrift { site: 3, value: 0.05 };
        assert!(f.to_string().contains("site 3"));
        let f = Finding::TvBudgetExceeded { site: 1, tv: 1.5 };
        assert!(f.to_string().contains("1.5"));
    }
}

//! Growth-optimal portfolio per slice, and the wealth processes it drives.
//!
//! The central object is the log-growth functional
//!
//! ```text
//! g(rho) = rho'b - ½ rho'c rho + Σ w [ln(1 + rho'z) - rho'z 1{|z| ≤ 1}]
//! ```
//!
//! whose maximiser over C ∩ N⊥ is the pre-numeraire portfolio. The first
//! variation of g in a direction π - ρ is the relative growth rate
//! `rel(π|ρ)`, so stationarity of g is exactly the optimality certificate
//! rel ≤ 0 against every admissible π. The solver is a projected damped
//! Newton iteration inside N⊥; the log terms act as their own barrier, so
//! line search only has to stop short of the nearest jump boundary.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::characteristics::{CharacteristicGrid, LocalCharacteristic, TRUNCATION_RADIUS};
use crate::cones::{self, ArbWitness};
use crate::error::{Error, Result};
use crate::gen;
use crate::lattice::{LatticeModel, ProcessOnLattice};

/// How a slice-level solve ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// A maximiser was found and certified.
    Solved,
    /// The slice admits immediate arbitrage; no maximiser exists.
    NoSolutionImmediateArbitrage,
    /// The iterates escaped past |rho| = 10^6: growth is unbounded even
    /// though the cone check found no witness (a tolerance leak).
    Unbounded,
}

/// Result of maximising the growth functional on one slice.
///
/// `rho`, `growth_value`, `rel_max`, `rel_sign_gap` and `gradient_norm` are
/// meaningful when `status` is `Solved`; for the other statuses `rho` holds
/// the diagnostic last iterate (or zero) and `growth_value` is +∞.
#[derive(Debug, Clone)]
pub struct PreNumeraire {
    pub status: SolveStatus,
    pub rho: DVector<f64>,
    pub growth_value: f64,
    /// Max of rel(π|rho) over the verification sample, folded together with
    /// the projected gradient norm.
    pub rel_max: f64,
    pub psi_value: f64,
    /// Largest disagreement between the two rel sign conventions over the
    /// verification sample; zero whenever ν has no atoms.
    pub rel_sign_gap: f64,
    /// Norm of the gradient of g at rho (automatically lies in N⊥).
    pub gradient_norm: f64,
    pub iterations: usize,
    pub witness: Option<ArbWitness>,
}

/// Knobs for `pre_numeraire_with`. The defaults match the certification
/// contract: 1000 verification samples, 500 Newton iterations max.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Seed for the verification sample (and nothing else; the solve itself
    /// is deterministic).
    pub seed: u64,
    pub verify_samples: usize,
    pub max_iterations: usize,
    /// Relative gradient tolerance for declaring stationarity.
    pub gradient_tol: f64,
    /// Optional starting point; projected onto N⊥ and pulled inside the
    /// cone if needed. Defaults to the origin.
    pub initial: Option<DVector<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            verify_samples: 1000,
            max_iterations: 500,
            gradient_tol: 1e-14,
            initial: None,
        }
    }
}

/// Log-growth rate of the constant-proportions portfolio rho on one slice.
/// Finite exactly when 1 + rho'z > 0 at every atom; -∞ otherwise.
pub fn growth(lc: &LocalCharacteristic, rho: &DVector<f64>) -> f64 {
    let mut value = rho.dot(lc.b()) - 0.5 * rho.dot(&(lc.c() * rho));
    for a in lc.nu().atoms() {
        let s = 1.0 + rho.dot(&a.point);
        if s <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut term = s.ln();
        if a.point.norm() <= TRUNCATION_RADIUS {
            term -= rho.dot(&a.point);
        }
        value += a.weight * term;
    }
    value
}

/// Gradient of the growth functional; `None` outside its finite region.
pub fn growth_gradient(lc: &LocalCharacteristic, rho: &DVector<f64>) -> Option<DVector<f64>> {
    let mut grad = lc.b() - lc.c() * rho;
    for a in lc.nu().atoms() {
        let s = 1.0 + rho.dot(&a.point);
        if s <= 0.0 {
            return None;
        }
        let mut factor = 1.0 / s;
        if a.point.norm() <= TRUNCATION_RADIUS {
            factor -= 1.0;
        }
        grad.axpy(a.weight * factor, &a.point, 1.0);
    }
    Some(grad)
}

fn growth_hessian(lc: &LocalCharacteristic, rho: &DVector<f64>) -> Option<DMatrix<f64>> {
    let mut hess = -lc.c().clone();
    for a in lc.nu().atoms() {
        let s = 1.0 + rho.dot(&a.point);
        if s <= 0.0 {
            return None;
        }
        let scale = a.weight / (s * s);
        hess.ger(-scale, &a.point, &a.point, 1.0);
    }
    Some(hess)
}

/// Which way the jump integral enters the relative growth rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelConvention {
    /// rel(π|ρ) = (π-ρ)' ∇g(ρ): the form whose nonpositivity certifies the
    /// maximiser. This is the default everywhere.
    GradientConsistent,
    /// Same expression with the jump integral negated, kept for comparison
    /// against sources that print it with the opposite sign.
    NegatedJumpIntegral,
}

/// Relative growth rate of π against ρ, gradient-consistent convention.
pub fn rel(lc: &LocalCharacteristic, pi: &DVector<f64>, rho: &DVector<f64>) -> Result<f64> {
    rel_with(lc, pi, rho, RelConvention::GradientConsistent)
}

/// Relative growth rate of π against ρ under the chosen sign convention.
pub fn rel_with(
    lc: &LocalCharacteristic,
    pi: &DVector<f64>,
    rho: &DVector<f64>,
    convention: RelConvention,
) -> Result<f64> {
    let diff = pi - rho;
    let linear = diff.dot(lc.b()) - diff.dot(&(lc.c() * rho));
    let mut jump = 0.0;
    for (k, a) in lc.nu().atoms().iter().enumerate() {
        let s = 1.0 + rho.dot(&a.point);
        if s <= 0.0 {
            return Err(Error::Domain(format!(
                "rel undefined: 1 + rho'z = {s} at atom {k}"
            )));
        }
        let d = diff.dot(&a.point);
        let mut term = d / s;
        if a.point.norm() <= TRUNCATION_RADIUS {
            term -= d;
        }
        jump += a.weight * term;
    }
    let jump = match convention {
        RelConvention::GradientConsistent => jump,
        RelConvention::NegatedJumpIntegral => -jump,
    };
    Ok(linear + jump)
}

/// Integrand of the deflator integrability test:
/// ψ(ρ) = ν[ρ'x > 1] + |ρ'b + Σ w ρ'z (1{|z| > 1} - 1{|ρ'z| > 1})|.
pub fn psi(lc: &LocalCharacteristic, rho: &DVector<f64>) -> f64 {
    let tail_mass = lc.nu().mass_where(|x| rho.dot(x) > 1.0);
    let mut inner = rho.dot(lc.b());
    for a in lc.nu().atoms() {
        let d = rho.dot(&a.point);
        let big_jump = if a.point.norm() > TRUNCATION_RADIUS { 1.0 } else { 0.0 };
        let big_gain = if d.abs() > 1.0 { 1.0 } else { 0.0 };
        inner += a.weight * d * (big_jump - big_gain);
    }
    tail_mass + inner.abs()
}

/// Maximises growth on one slice with default options.
pub fn pre_numeraire(lc: &LocalCharacteristic) -> Result<PreNumeraire> {
    pre_numeraire_with(lc, &SolverOptions::default())
}

/// Maximises the growth functional over C ∩ N⊥.
///
/// Runs the cone analysis first: a slice with immediate arbitrage has no
/// maximiser and is reported as such rather than solved. Otherwise a damped
/// Newton iteration in the N⊥ coordinates, with exact line search capped
/// just short of the nearest jump boundary, converges to the unique
/// stationary point. The answer is certified by evaluating rel(π|ρ) on a
/// seeded sample of random admissible π.
pub fn pre_numeraire_with(lc: &LocalCharacteristic, opts: &SolverOptions) -> Result<PreNumeraire> {
    let d = lc.dim();
    let report = cones::cone_report(lc)?;
    if let Some(witness) = report.witness {
        return Ok(PreNumeraire {
            status: SolveStatus::NoSolutionImmediateArbitrage,
            rho: DVector::zeros(d),
            growth_value: f64::INFINITY,
            rel_max: 0.0,
            psi_value: 0.0,
            rel_sign_gap: 0.0,
            gradient_norm: 0.0,
            iterations: 0,
            witness: Some(witness),
        });
    }

    let (_, range) = cones::null_space_split(lc);
    let constrained_to_origin =
        lc.nu().envelope() == crate::measure::SupportEnvelope::UnboundedAllDirections;
    if range.is_empty() || constrained_to_origin {
        let rho = DVector::zeros(d);
        let (rel_max, rel_sign_gap) = certify(lc, &rho, opts);
        return Ok(PreNumeraire {
            status: SolveStatus::Solved,
            growth_value: growth(lc, &rho),
            rel_max,
            psi_value: psi(lc, &rho),
            rel_sign_gap,
            gradient_norm: 0.0,
            iterations: 0,
            witness: None,
            rho,
        });
    }

    let q = DMatrix::from_columns(&range);
    let scale = 1.0_f64
        .max(lc.b().amax())
        .max(lc.c().amax())
        .max(lc.nu().mass());
    let tol_hard = opts.gradient_tol * scale;
    let tol_soft = 1e-8 * scale;

    let mut rho = starting_point(lc, &q, opts.initial.as_ref());
    let mut iterations = 0usize;
    let mut stall = 0usize;
    loop {
        let grad = growth_gradient(lc, &rho)
            .ok_or_else(|| Error::Internal("iterate left the finite region of g".into()))?;
        let reduced_grad = q.transpose() * &grad;
        let gradient_norm = reduced_grad.norm();
        if gradient_norm <= tol_hard {
            break;
        }
        if iterations >= opts.max_iterations {
            if gradient_norm <= tol_soft {
                break;
            }
            return Err(Error::NoConvergence {
                iterations,
                gradient_norm,
                last_iterate: rho.iter().copied().collect(),
            });
        }

        let hess = growth_hessian(lc, &rho)
            .ok_or_else(|| Error::Internal("iterate left the finite region of g".into()))?;
        let reduced = q.transpose() * hess * &q;
        let dir = solve_newton_system(&reduced, &reduced_grad, scale)?;
        let step = &q * &dir;

        let t = line_search(lc, &rho, &step);
        rho.axpy(t, &step, 1.0);
        iterations += 1;

        if rho.amax() > 1e6 {
            return Ok(PreNumeraire {
                status: SolveStatus::Unbounded,
                growth_value: f64::INFINITY,
                rel_max: 0.0,
                psi_value: psi(lc, &rho),
                rel_sign_gap: 0.0,
                gradient_norm,
                iterations,
                witness: None,
                rho,
            });
        }

        if t * step.amax() <= 1e-16 * (1.0 + rho.amax()) {
            stall += 1;
            if stall >= 3 {
                let g = growth_gradient(lc, &rho).map(|g| g.norm()).unwrap_or(f64::NAN);
                if g <= tol_soft {
                    break;
                }
                return Err(Error::NoConvergence {
                    iterations,
                    gradient_norm: g,
                    last_iterate: rho.iter().copied().collect(),
                });
            }
        } else {
            stall = 0;
        }
    }

    let gradient_norm = growth_gradient(lc, &rho).map(|g| g.norm()).unwrap_or(f64::NAN);
    let (sampled_rel_max, rel_sign_gap) = certify(lc, &rho, opts);
    Ok(PreNumeraire {
        status: SolveStatus::Solved,
        growth_value: growth(lc, &rho),
        rel_max: sampled_rel_max.max(gradient_norm),
        psi_value: psi(lc, &rho),
        rel_sign_gap,
        gradient_norm,
        iterations,
        witness: None,
        rho,
    })
}

fn starting_point(
    lc: &LocalCharacteristic,
    q: &DMatrix<f64>,
    initial: Option<&DVector<f64>>,
) -> DVector<f64> {
    let d = lc.dim();
    let Some(x) = initial else {
        return DVector::zeros(d);
    };
    // project onto N⊥, then shrink towards the origin until strictly inside
    let mut rho = q * (q.transpose() * x);
    for _ in 0..80 {
        if lc
            .nu()
            .atoms()
            .iter()
            .all(|a| 1.0 + rho.dot(&a.point) > 1e-12)
        {
            return rho;
        }
        rho *= 0.5;
    }
    DVector::zeros(d)
}

fn solve_newton_system(
    reduced_hessian: &DMatrix<f64>,
    reduced_grad: &DVector<f64>,
    scale: f64,
) -> Result<DVector<f64>> {
    let k = reduced_grad.len();
    let base = -reduced_hessian;
    let mut ridge = 0.0f64;
    loop {
        let m = &base + DMatrix::identity(k, k) * ridge;
        if let Some(chol) = m.cholesky() {
            return Ok(chol.solve(reduced_grad));
        }
        ridge = if ridge == 0.0 {
            1e-12 * (1.0 + base.trace().abs())
        } else {
            ridge * 100.0
        };
        if ridge > 1e6 * scale {
            return Err(Error::Internal(
                "projected Hessian is not negative definite".into(),
            ));
        }
    }
}

/// Exact line search for max_t g(rho + t step) by bisection on the
/// directional derivative, capped just short of the nearest boundary where
/// a wealth factor 1 + rho'z would hit zero.
fn line_search(lc: &LocalCharacteristic, rho: &DVector<f64>, step: &DVector<f64>) -> f64 {
    let mut t_block = f64::INFINITY;
    for a in lc.nu().atoms() {
        let along = step.dot(&a.point);
        if along < 0.0 {
            let s = 1.0 + rho.dot(&a.point);
            t_block = t_block.min(s / -along);
        }
    }
    let step_amax = step.amax().max(1e-300);
    let mut hi = if t_block.is_finite() {
        t_block * (1.0 - 1e-12)
    } else {
        // no boundary in this direction: huge cap, divergence is caught by
        // the |rho| guard in the caller
        1e12 / step_amax
    };

    let slope = |t: f64| -> Option<f64> {
        let point = rho + step * t;
        growth_gradient(lc, &point).map(|g| step.dot(&g))
    };

    // back off from the cap if rounding already crossed the boundary there
    let mut hi_slope = slope(hi);
    for _ in 0..8 {
        if hi_slope.is_some() {
            break;
        }
        hi *= 1.0 - 1e-9;
        hi_slope = slope(hi);
    }
    match hi_slope {
        Some(s) if s >= 0.0 => return hi,
        None => return 0.0,
        _ => {}
    }

    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-18 * hi.max(1.0) {
            break;
        }
        match slope(mid) {
            Some(s) if s > 0.0 => lo = mid,
            _ => hi = mid,
        }
    }
    0.5 * (lo + hi)
}

/// Evaluates rel against a seeded sample of admissible portfolios.
/// Returns (max rel, max disagreement between the two sign conventions).
fn certify(lc: &LocalCharacteristic, rho: &DVector<f64>, opts: &SolverOptions) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let origin = DVector::zeros(lc.dim());
    let mut rel_max = rel(lc, &origin, rho).unwrap_or(f64::NAN);
    let mut gap_max = 0.0f64;
    for _ in 0..opts.verify_samples {
        let pi = gen::sample_admissible(&mut rng, lc);
        let Ok(r) = rel(lc, &pi, rho) else {
            continue;
        };
        rel_max = rel_max.max(r);
        let literal = rel_with(lc, &pi, rho, RelConvention::NegatedJumpIntegral)
            .expect("same domain as the gradient-consistent form");
        gap_max = gap_max.max((r - literal).abs());
    }
    (rel_max, gap_max)
}

/// ψ(ρ)·dG summed over the slices up to the horizon. `per_slice` is aligned
/// with the active slices; an unsolved slice makes the total undefined and
/// is reported by index.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityCheck {
    pub total: Option<f64>,
    pub per_slice: Vec<Option<f64>>,
    pub undefined_at: Option<usize>,
}

/// Sums ψ(ρ_t)·dG_t over the active slices of the grid. `rho_path` must
/// supply one entry per grid slice, `None` marking slices without a solved
/// portfolio.
pub fn check_integrability(
    grid: &CharacteristicGrid,
    rho_path: &[Option<DVector<f64>>],
) -> Result<IntegrabilityCheck> {
    if rho_path.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: rho_path.len(),
        });
    }
    let mut per_slice = Vec::new();
    let mut undefined_at = None;
    let mut total = 0.0;
    for (i, lc) in grid.active_slices().iter().enumerate() {
        match &rho_path[i] {
            Some(rho) => {
                let v = psi(lc, rho) * lc.d_g();
                total += v;
                per_slice.push(Some(v));
            }
            None => {
                if undefined_at.is_none() {
                    undefined_at = Some(i);
                }
                per_slice.push(None);
            }
        }
    }
    Ok(IntegrabilityCheck {
        total: if undefined_at.is_none() { Some(total) } else { None },
        per_slice,
        undefined_at,
    })
}

/// Extracts the per-slice portfolio path from solver results, `None` where
/// the status is not `Solved`.
pub fn solved_rho_path(solves: &[PreNumeraire]) -> Vec<Option<DVector<f64>>> {
    solves
        .iter()
        .map(|s| (s.status == SolveStatus::Solved).then(|| s.rho.clone()))
        .collect()
}

/// Holdings of the portfolio that invests proportion πᵢ of wealth in asset
/// i: Hᵢ = V·πᵢ/Sᵢ.
pub fn proportions_to_portfolio(
    pi: &DVector<f64>,
    prices: &DVector<f64>,
    wealth: f64,
) -> Result<DVector<f64>> {
    if pi.len() != prices.len() {
        return Err(Error::DimensionMismatch {
            expected: prices.len(),
            got: pi.len(),
        });
    }
    check_positive_frame(prices, wealth)?;
    Ok(DVector::from_fn(pi.len(), |i, _| wealth * pi[i] / prices[i]))
}

/// Proportions held by the portfolio with holdings H: πᵢ = Sᵢ·Hᵢ/V.
pub fn portfolio_to_proportions(
    holdings: &DVector<f64>,
    prices: &DVector<f64>,
    wealth: f64,
) -> Result<DVector<f64>> {
    if holdings.len() != prices.len() {
        return Err(Error::DimensionMismatch {
            expected: prices.len(),
            got: holdings.len(),
        });
    }
    check_positive_frame(prices, wealth)?;
    Ok(DVector::from_fn(holdings.len(), |i, _| {
        prices[i] * holdings[i] / wealth
    }))
}

fn check_positive_frame(prices: &DVector<f64>, wealth: f64) -> Result<()> {
    if wealth <= 0.0 || !wealth.is_finite() {
        return Err(Error::Domain(format!("wealth must be positive, got {wealth}")));
    }
    if let Some(bad) = prices.iter().find(|&&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::Domain(format!("prices must be positive, got {bad}")));
    }
    Ok(())
}

/// A self-financing portfolio on a lattice, in all three coordinates at
/// once: proportions, holdings, and the wealth process they generate.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioPath {
    pub proportions: Vec<DVector<f64>>,
    pub holdings: Vec<DVector<f64>>,
    pub wealth: ProcessOnLattice,
}

/// Runs the multiplicative wealth recursion V⁺ = V·(1 + ρ'ΔX) for the given
/// per-node proportions (unit initial capital) and converts to holdings at
/// every node. Fails with the offending location if some branch drives
/// wealth nonpositive.
pub fn numeraire_wealth(model: &LatticeModel, rho: &[DVector<f64>]) -> Result<PortfolioPath> {
    if rho.len() != model.num_nodes() {
        return Err(Error::DimensionMismatch {
            expected: model.num_nodes(),
            got: rho.len(),
        });
    }
    let wealth = model.wealth_path(rho)?;
    let prices = model.price_table();
    let holdings = (0..model.num_nodes())
        .map(|id| proportions_to_portfolio(&rho[id], &prices[id], wealth[id]))
        .collect::<Result<Vec<_>>>()?;
    Ok(PortfolioPath {
        proportions: rho.to_vec(),
        holdings,
        wealth,
    })
}

/// Pre-numeraire solves for every slice of a grid. Each slice gets its own
/// verification stream derived from the base seed, so results do not depend
/// on solve order.
pub fn solve_grid(grid: &CharacteristicGrid, opts: &SolverOptions) -> Result<Vec<PreNumeraire>> {
    grid.slices()
        .iter()
        .enumerate()
        .map(|(i, lc)| {
            let per_slice = SolverOptions {
                seed: mix_seed(opts.seed, i as u64),
                initial: opts.initial.clone(),
                ..*opts
            };
            pre_numeraire_with(lc, &per_slice)
        })
        .collect()
}

/// Per-node solves plus the numeraire wealth process of a lattice.
#[derive(Debug, Clone)]
pub struct LatticeSolve {
    /// One solve per internal node, `None` at leaves.
    pub per_node: Vec<Option<PreNumeraire>>,
    /// Present when every internal node solved.
    pub path: Option<PortfolioPath>,
    pub all_solved: bool,
    pub first_failure: Option<usize>,
}

/// Solves the growth program at every internal node of a lattice and, when
/// all nodes admit a maximiser, accumulates the numeraire wealth process.
pub fn solve_lattice(model: &LatticeModel, opts: &SolverOptions) -> Result<LatticeSolve> {
    let n = model.num_nodes();
    let mut per_node: Vec<Option<PreNumeraire>> = vec![None; n];
    let mut rhos = vec![DVector::zeros(model.dim()); n];
    let mut all_solved = true;
    let mut first_failure = None;
    for id in model.internal_nodes().collect::<Vec<_>>() {
        let lc = model.node_characteristic(id)?;
        let per_slice = SolverOptions {
            seed: mix_seed(opts.seed, id as u64),
            initial: opts.initial.clone(),
            ..*opts
        };
        let solve = pre_numeraire_with(&lc, &per_slice)?;
        if solve.status == SolveStatus::Solved {
            rhos[id] = solve.rho.clone();
        } else {
            all_solved = false;
            if first_failure.is_none() {
                first_failure = Some(id);
            }
        }
        per_node[id] = Some(solve);
    }
    let path = if all_solved {
        Some(numeraire_wealth(model, &rhos)?)
    } else {
        None
    };
    Ok(LatticeSolve {
        per_node,
        path,
        all_solved,
        first_failure,
    })
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

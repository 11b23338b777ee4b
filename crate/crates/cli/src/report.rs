//! Typed report sections and the stage runners that fill them.
//!
//! Each subcommand maps to one section; `report` bundles all of them in
//! pipeline order. Sections hold plain vectors and strings so the emitter
//! controls every byte of the output.

use serde::Serialize;

use nupbr_core::characteristics::CharacteristicGrid;
use nupbr_core::cones::{cone_report, ArbWitness};
use nupbr_core::deflator::{
    deflate_grid, deflate_lattice, standard_strategies, verify_deflator, GridDeflation,
    LatticeDeflation, SliceDeflation, COMPENSATOR_TOL, TV_BUDGET,
};
use nupbr_core::lattice::LatticeModel;
use nupbr_core::numeraire::{pre_numeraire_with, solve_lattice, PreNumeraire, SolveStatus, SolverOptions};
use nupbr_core::Result;

/// How many random admissible strategies `verify` throws at a lattice
/// deflator, on top of doing-nothing and the per-asset buy-and-holds.
pub const VERIFY_STRATEGIES: usize = 100;

/// Everything a run echoes about itself.
#[derive(Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub mode: String,
    pub model_path: String,
    pub seed: u64,
    pub tolerance: f64,
}

/// A parsed input in either schema.
pub enum ParsedModel {
    Grid { grid: CharacteristicGrid, warnings: Vec<String> },
    Lattice(LatticeModel),
}

fn slice_seed(seed: u64, site: usize) -> u64 {
    seed ^ (site as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct Shape {
    pub dim: usize,
    pub nodes: usize,
    pub leaves: usize,
    pub max_depth: usize,
    pub max_branching: usize,
}

#[derive(Serialize)]
pub struct SiteValidation {
    pub site: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    pub violations: Vec<String>,
    pub min_eigenvalue: f64,
    pub jump_second_moment: f64,
}

#[derive(Serialize)]
pub struct ValidateSection {
    pub valid: bool,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<Shape>,
    pub sites: Vec<SiteValidation>,
}

pub fn validate_section(model: &ParsedModel) -> Result<ValidateSection> {
    let mut sites = Vec::new();
    let (warnings, shape) = match model {
        ParsedModel::Grid { grid, warnings } => {
            for (i, lc) in grid.slices().iter().enumerate() {
                let r = lc.validate();
                sites.push(SiteValidation {
                    site: i,
                    time: Some(grid.times()[i]),
                    violations: r.violations.iter().map(|v| v.to_string()).collect(),
                    min_eigenvalue: r.min_eigenvalue,
                    jump_second_moment: r.jump_second_moment,
                });
            }
            (warnings.clone(), None)
        }
        ParsedModel::Lattice(m) => {
            for id in m.internal_nodes().collect::<Vec<_>>() {
                let r = m.node_characteristic(id)?.validate();
                sites.push(SiteValidation {
                    site: id,
                    time: None,
                    violations: r.violations.iter().map(|v| v.to_string()).collect(),
                    min_eigenvalue: r.min_eigenvalue,
                    jump_second_moment: r.jump_second_moment,
                });
            }
            let shape = Shape {
                dim: m.dim(),
                nodes: m.num_nodes(),
                leaves: m.leaves().count(),
                max_depth: m.max_depth(),
                max_branching: m.max_branching(),
            };
            (Vec::new(), Some(shape))
        }
    };
    let valid = sites.iter().all(|s| s.violations.is_empty());
    Ok(ValidateSection { valid, warnings, shape, sites })
}

// ---------------------------------------------------------------------------
// cones
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct WitnessOut {
    pub direction: Vec<f64>,
    pub drift_margin: f64,
    pub cone_slack: f64,
    pub c_residual: f64,
    pub evidence: f64,
}

impl From<&ArbWitness> for WitnessOut {
    fn from(w: &ArbWitness) -> Self {
        WitnessOut {
            direction: w.direction.iter().copied().collect(),
            drift_margin: w.drift_margin,
            cone_slack: w.cone_slack,
            c_residual: w.c_residual,
            evidence: w.evidence,
        }
    }
}

#[derive(Serialize)]
pub struct SiteCones {
    pub site: usize,
    pub null_space_dim: usize,
    pub drift_optimum: f64,
    pub face_positivity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessOut>,
}

#[derive(Serialize)]
pub struct ConesSection {
    pub arbitrage_found: bool,
    pub sites: Vec<SiteCones>,
}

pub fn cones_section(model: &ParsedModel) -> Result<ConesSection> {
    let mut sites = Vec::new();
    let mut push = |site: usize, lc: &nupbr_core::characteristics::LocalCharacteristic| -> Result<()> {
        let r = cone_report(lc)?;
        sites.push(SiteCones {
            site,
            null_space_dim: r.null_space_basis.len(),
            drift_optimum: r.drift_optimum,
            face_positivity: r.face_positivity,
            witness: r.witness.as_ref().map(WitnessOut::from),
        });
        Ok(())
    };
    match model {
        ParsedModel::Grid { grid, .. } => {
            for (i, lc) in grid.slices().iter().enumerate() {
                push(i, lc)?;
            }
        }
        ParsedModel::Lattice(m) => {
            for id in m.internal_nodes().collect::<Vec<_>>() {
                push(id, &m.node_characteristic(id)?)?;
            }
        }
    }
    let arbitrage_found = sites.iter().any(|s| s.witness.is_some());
    Ok(ConesSection { arbitrage_found, sites })
}

// ---------------------------------------------------------------------------
// numeraire
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct SiteSolve {
    pub site: usize,
    pub status: &'static str,
    pub rho: Vec<f64>,
    /// Growth at the optimum; absent when growth is unbounded above.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    pub rel_max: f64,
    pub psi: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<WitnessOut>,
}

#[derive(Serialize)]
pub struct NumeraireSection {
    pub all_solved: bool,
    pub sites: Vec<SiteSolve>,
    /// Wealth of the numeraire portfolio per lattice node, unit start.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wealth: Option<Vec<f64>>,
}

fn status_text(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Solved => "solved",
        SolveStatus::NoSolutionImmediateArbitrage => "immediate_arbitrage",
        SolveStatus::Unbounded => "unbounded",
    }
}

fn site_solve(site: usize, s: &PreNumeraire) -> SiteSolve {
    SiteSolve {
        site,
        status: status_text(s.status),
        rho: s.rho.iter().copied().collect(),
        growth: s.growth_value.is_finite().then_some(s.growth_value),
        rel_max: s.rel_max,
        psi: s.psi_value,
        gradient_norm: s.gradient_norm,
        iterations: s.iterations,
        witness: s.witness.as_ref().map(WitnessOut::from),
    }
}

pub fn numeraire_section(model: &ParsedModel, seed: u64) -> Result<NumeraireSection> {
    match model {
        ParsedModel::Grid { grid, .. } => {
            let mut sites = Vec::new();
            for (i, lc) in grid.slices().iter().enumerate() {
                let opts = SolverOptions { seed: slice_seed(seed, i), ..SolverOptions::default() };
                sites.push(site_solve(i, &pre_numeraire_with(lc, &opts)?));
            }
            let all_solved = sites.iter().all(|s| s.status == "solved");
            Ok(NumeraireSection { all_solved, sites, wealth: None })
        }
        ParsedModel::Lattice(m) => {
            let opts = SolverOptions { seed, ..SolverOptions::default() };
            let solve = solve_lattice(m, &opts)?;
            let sites = solve
                .per_node
                .iter()
                .enumerate()
                .filter_map(|(id, s)| s.as_ref().map(|s| site_solve(id, s)))
                .collect();
            Ok(NumeraireSection {
                all_solved: solve.all_solved,
                sites,
                wealth: solve.path.map(|p| p.wealth),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// deflate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct SiteDeflate {
    pub site: usize,
    /// False for grid slices beyond the horizon, which pass through
    /// untouched.
    pub active: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub has_tail: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_drift_residual: Option<f64>,
}

#[derive(Serialize)]
pub struct DeflateSection {
    pub clean: bool,
    pub findings: Vec<String>,
    pub sites: Vec<SiteDeflate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lepingle_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_total: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_compensator: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tv_rate: Option<f64>,
    /// The deflator per lattice node, when the pipeline went through.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deflator: Option<Vec<f64>>,
}

fn site_deflate(site: usize, d: Option<&SliceDeflation>) -> SiteDeflate {
    match d {
        None => SiteDeflate {
            site,
            active: false,
            has_tail: None,
            beta: None,
            tv: None,
            zero_drift_residual: None,
        },
        Some(d) => SiteDeflate {
            site,
            active: true,
            has_tail: Some(d.in_d),
            beta: d.beta,
            tv: d.rebalanced.as_ref().map(|r| r.tv),
            zero_drift_residual: Some(d.zero_drift_residual),
        },
    }
}

/// Which pipeline output backs the deflate and verify sections.
pub enum Deflation {
    Grid(GridDeflation),
    Lattice(Box<LatticeDeflation>),
}

pub fn run_deflation(model: &ParsedModel, seed: u64) -> Result<Deflation> {
    match model {
        ParsedModel::Grid { grid, .. } => Ok(Deflation::Grid(deflate_grid(grid)?)),
        ParsedModel::Lattice(m) => {
            let opts = SolverOptions { seed, ..SolverOptions::default() };
            Ok(Deflation::Lattice(Box::new(deflate_lattice(m, &opts)?)))
        }
    }
}

pub fn deflate_section(deflation: &Deflation) -> DeflateSection {
    match deflation {
        Deflation::Grid(g) => DeflateSection {
            clean: g.findings.is_empty(),
            findings: g.findings.iter().map(|f| f.to_string()).collect(),
            sites: g
                .per_slice
                .iter()
                .enumerate()
                .map(|(i, d)| site_deflate(i, d.as_ref()))
                .collect(),
            lepingle_total: Some(g.lepingle_total),
            g_total: Some(g.g_total),
            max_compensator: None,
            max_tv_rate: None,
            deflator: None,
        },
        Deflation::Lattice(l) => DeflateSection {
            clean: l.findings.is_empty(),
            findings: l.findings.iter().map(|f| f.to_string()).collect(),
            sites: l
                .per_node
                .iter()
                .enumerate()
                .filter(|(_, d)| d.is_some())
                .map(|(id, d)| site_deflate(id, d.as_ref()))
                .collect(),
            lepingle_total: None,
            g_total: None,
            max_compensator: l.em.as_ref().map(|e| e.max_compensator),
            max_tv_rate: l.em.as_ref().map(|e| e.max_tv),
            deflator: l.xi.clone(),
        },
    }
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct CheckOut {
    pub name: &'static str,
    pub value: f64,
    pub bound: f64,
    pub passes: bool,
}

fn check(name: &'static str, value: f64, bound: f64) -> CheckOut {
    CheckOut { name, value, bound, passes: value <= bound }
}

#[derive(Serialize)]
pub struct WorstOut {
    pub strategy: usize,
    pub node: usize,
    pub violation: f64,
}

#[derive(Serialize)]
pub struct VerifySection {
    pub passes: bool,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    pub checks: Vec<CheckOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategies: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_violation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst: Option<WorstOut>,
}

pub fn verify_section(
    model: &ParsedModel,
    deflation: &Deflation,
    tolerance: f64,
    seed: u64,
) -> Result<VerifySection> {
    match deflation {
        Deflation::Grid(g) => {
            let mut checks = Vec::new();
            let mut residual_max = 0.0f64;
            let mut tv_max = 0.0f64;
            for d in g.per_slice.iter().flatten() {
                residual_max = residual_max.max(d.zero_drift_residual);
                if let Some(r) = &d.rebalanced {
                    tv_max = tv_max.max(r.tv);
                }
            }
            checks.push(check("zero_drift_residual_max", residual_max, tolerance));
            checks.push(check("rebalance_tv_max", tv_max, TV_BUDGET));
            checks.push(check("lepingle_total_vs_horizon", g.lepingle_total, g.g_total + 1e-12));
            let clean = g.findings.is_empty();
            let passes = clean && checks.iter().all(|c| c.passes);
            Ok(VerifySection {
                passes,
                tolerance,
                skipped: (!clean).then(|| "pipeline findings above".to_owned()),
                checks,
                strategies: None,
                max_violation: None,
                worst: None,
            })
        }
        Deflation::Lattice(l) => {
            let ParsedModel::Lattice(m) = model else {
                unreachable!("lattice deflation comes from a lattice model");
            };
            let Some(xi) = &l.xi else {
                return Ok(VerifySection {
                    passes: false,
                    tolerance,
                    skipped: Some("no deflator was assembled; see the pipeline findings".into()),
                    checks: Vec::new(),
                    strategies: None,
                    max_violation: None,
                    worst: None,
                });
            };
            let strategies = standard_strategies(m, seed, VERIFY_STRATEGIES);
            let report = verify_deflator(m, xi, &strategies)?;
            let mut checks = vec![check("martingale_violation_max", report.max_violation, tolerance)];
            if let Some(em) = &l.em {
                checks.push(check("jump_compensator_max", em.max_compensator, COMPENSATOR_TOL));
                checks.push(check("density_tv_rate_max", em.max_tv, TV_BUDGET));
                let leaf_slack = m
                    .leaves()
                    .map(|id| em.lepingle[id] - em.g_cum[id])
                    .fold(f64::NEG_INFINITY, f64::max);
                checks.push(check("lepingle_vs_horizon_max", leaf_slack, 1e-12));
            }
            let worst = report
                .per_strategy
                .iter()
                .max_by(|a, b| a.violation.total_cmp(&b.violation))
                .map(|v| WorstOut { strategy: v.strategy, node: v.node, violation: v.violation });
            let passes = checks.iter().all(|c| c.passes);
            Ok(VerifySection {
                passes,
                tolerance,
                skipped: None,
                checks,
                strategies: Some(strategies.len()),
                max_violation: Some(report.max_violation),
                worst,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// wrappers
// ---------------------------------------------------------------------------

#[derive(Serialize)]
pub struct ValidateReport {
    pub provenance: Provenance,
    pub validate: ValidateSection,
}

#[derive(Serialize)]
pub struct ConesReport {
    pub provenance: Provenance,
    pub cones: ConesSection,
}

#[derive(Serialize)]
pub struct NumeraireReport {
    pub provenance: Provenance,
    pub numeraire: NumeraireSection,
}

#[derive(Serialize)]
pub struct DeflateReport {
    pub provenance: Provenance,
    pub deflate: DeflateSection,
}

#[derive(Serialize)]
pub struct VerifyReportOut {
    pub provenance: Provenance,
    pub verify: VerifySection,
}

#[derive(Serialize)]
pub struct FullReport {
    pub provenance: Provenance,
    /// Echo of the parsed model; re-ingesting it reproduces the run input.
    pub model: serde_json::Value,
    pub validate: ValidateSection,
    pub cones: ConesSection,
    pub numeraire: NumeraireSection,
    pub deflate: DeflateSection,
    pub verify: VerifySection,
}

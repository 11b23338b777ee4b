//! Finite event lattices: explicit probability trees on which every
//! martingale statement can be checked as a finite sum.
//!
//! A lattice is a rooted tree. Each internal node carries a branch law:
//! strictly positive probabilities summing to one, a per-asset return vector
//! `dx` (componentwise > -1 so prices stay positive), and a reference
//! increment `dG` for that step. Probabilities may be given exactly as
//! `"a/b"` strings, in which case the sum-to-one invariant is checked in
//! integer arithmetic.
//!
//! The exact engine deliberately refuses trees deeper than 6 levels or wider
//! than 4 branches per node; the point of this crate is exact verification,
//! not simulation.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::characteristics::{LocalCharacteristic, TRUNCATION_RADIUS};
use crate::cones;
use crate::error::{Error, Result};
use crate::measure::{Atom, DiscreteMeasure, SupportEnvelope};

pub const MAX_DEPTH: usize = 6;
pub const MAX_BRANCHING: usize = 4;
/// Stricter caps for the exhaustive no-unbounded-profit oracle, which visits
/// every node and solves linear programs at each.
pub const ORACLE_MAX_DEPTH: usize = 4;
pub const ORACLE_MAX_BRANCHING: usize = 3;

/// Scalar values attached to every node, such as a wealth path or a deflator.
pub type ProcessOnLattice = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub probability: f64,
    /// Set when the input gave the probability as an exact fraction.
    pub exact: Option<(u64, u64)>,
    /// Per-asset simple returns over this step; each component > -1.
    pub jump: DVector<f64>,
    pub child: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub branches: Vec<Branch>,
    pub d_g: f64,
    pub depth: usize,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.branches.is_empty()
    }
}

/// A validated lattice. Nodes live in an arena in depth-first preorder, so
/// every parent index is smaller than its children's.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeModel {
    dim: usize,
    s0: DVector<f64>,
    nodes: Vec<Node>,
    parents: Vec<Option<usize>>,
}

impl LatticeModel {
    pub fn from_wire(wire: LatticeWire) -> Result<Self> {
        if wire.dim == 0 {
            return Err(Error::InvalidModel("lattice dimension must be at least 1".into()));
        }
        if wire.s0.len() != wire.dim {
            return Err(Error::DimensionMismatch { expected: wire.dim, got: wire.s0.len() });
        }
        if !wire.s0.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidModel("initial prices must be strictly positive".into()));
        }
        let mut nodes = Vec::new();
        let mut parents = Vec::new();
        build_node(&mut nodes, &mut parents, wire.root, None, 0, wire.dim)?;
        let model = Self { dim: wire.dim, s0: DVector::from_vec(wire.s0), nodes, parents };
        // prices stay positive by the jump bound; confirm numerically anyway
        for price in model.price_table() {
            if !price.iter().all(|&s| s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidModel("an implied price is not strictly positive".into()));
            }
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn s0(&self) -> &DVector<f64> {
        &self.s0
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parents[id]
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        self.nodes[id].is_leaf()
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_leaf())
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn max_branching(&self) -> usize {
        self.nodes.iter().map(|n| n.branches.len()).max().unwrap_or(0)
    }

    /// Price vector at every node: S0 at the root, then componentwise
    /// S_child = S_parent (1 + dx).
    pub fn price_table(&self) -> Vec<DVector<f64>> {
        let mut prices = vec![DVector::zeros(self.dim); self.nodes.len()];
        prices[0] = self.s0.clone();
        for id in 0..self.nodes.len() {
            let parent_price = prices[id].clone();
            for b in &self.nodes[id].branches {
                let mut p = parent_price.clone();
                for i in 0..self.dim {
                    p[i] *= 1.0 + b.jump[i];
                }
                prices[b.child] = p;
            }
        }
        prices
    }

    /// Probability of reaching each node from the root.
    pub fn path_probabilities(&self) -> Vec<f64> {
        let mut probs = vec![0.0; self.nodes.len()];
        probs[0] = 1.0;
        for id in 0..self.nodes.len() {
            for b in &self.nodes[id].branches {
                probs[b.child] = probs[id] * b.probability;
            }
        }
        probs
    }

    /// The local characteristic seen standing at an internal node: ν is the
    /// branch law scaled by the step length (atoms at the nonzero jumps,
    /// duplicates merged), b the small-jump mean at the same rate, c = 0.
    pub fn node_characteristic(&self, id: usize) -> Result<LocalCharacteristic> {
        let node = &self.nodes[id];
        if node.is_leaf() {
            return Err(Error::LeafNode { node: id });
        }
        let rate = 1.0 / node.d_g;
        let mut b = DVector::zeros(self.dim);
        let mut atoms = Vec::new();
        for br in &node.branches {
            if br.jump.norm() <= TRUNCATION_RADIUS {
                b.axpy(br.probability * rate, &br.jump, 1.0);
            }
            if br.jump.iter().any(|&x| x != 0.0) {
                atoms.push(Atom { point: br.jump.clone(), weight: br.probability * rate });
            }
        }
        let nu = DiscreteMeasure::from_atoms_merging(self.dim, atoms, SupportEnvelope::Bounded)?;
        LocalCharacteristic::new(b, nalgebra::DMatrix::zeros(self.dim, self.dim), nu, node.d_g)
    }

    /// Wealth of a self-financing unit-capital strategy holding proportions
    /// `pi[id]` while standing at node `id`. Fails with the offending node
    /// and branch if any one-step factor 1 + πᵀdx is not strictly positive.
    pub fn wealth_path(&self, pi: &[DVector<f64>]) -> Result<ProcessOnLattice> {
        if pi.len() != self.nodes.len() {
            return Err(Error::Internal(format!(
                "{} portfolio entries for {} nodes",
                pi.len(),
                self.nodes.len()
            )));
        }
        let mut wealth = vec![0.0; self.nodes.len()];
        wealth[0] = 1.0;
        for id in 0..self.nodes.len() {
            let node = &self.nodes[id];
            if node.is_leaf() {
                continue;
            }
            if pi[id].len() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: pi[id].len() });
            }
            for (k, b) in node.branches.iter().enumerate() {
                let factor = 1.0 + pi[id].dot(&b.jump);
                if factor <= 0.0 || factor.is_nan() {
                    return Err(Error::NonpositiveWealth { node: id, branch: k });
                }
                wealth[b.child] = wealth[id] * factor;
            }
        }
        Ok(wealth)
    }

    /// One-step conditional expectation of a node process at an internal
    /// node: Σ p_j values[child_j].
    pub fn conditional_expectation(&self, values: &[f64], id: usize) -> Result<f64> {
        let node = &self.nodes[id];
        if node.is_leaf() {
            return Err(Error::LeafNode { node: id });
        }
        Ok(node.branches.iter().map(|b| b.probability * values[b.child]).sum())
    }

    /// Distribution of a node process at the leaves: (path probability,
    /// value) pairs in leaf order.
    pub fn terminal_distribution(&self, values: &[f64]) -> Vec<(f64, f64)> {
        let probs = self.path_probabilities();
        self.leaves().map(|id| (probs[id], values[id])).collect()
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    parents: &mut Vec<Option<usize>>,
    wire: NodeWire,
    parent: Option<usize>,
    depth: usize,
    dim: usize,
) -> Result<usize> {
    if depth > MAX_DEPTH {
        return Err(Error::ScaleLimit(format!("tree depth exceeds {MAX_DEPTH}")));
    }
    if wire.branches.len() > MAX_BRANCHING {
        return Err(Error::ScaleLimit(format!(
            "node has {} branches, the exact engine allows at most {MAX_BRANCHING}",
            wire.branches.len()
        )));
    }
    if wire.d_g <= 0.0 || !wire.d_g.is_finite() {
        return Err(Error::InvalidModel(format!("dG must be a positive real, got {}", wire.d_g)));
    }
    let id = nodes.len();
    nodes.push(Node { branches: Vec::new(), d_g: wire.d_g, depth });
    parents.push(parent);

    if wire.branches.is_empty() {
        return Ok(id);
    }

    let mut branches = Vec::with_capacity(wire.branches.len());
    let mut prob_sum = 0.0f64;
    let mut exact_fractions: Vec<Option<(u64, u64)>> = Vec::new();
    for bw in wire.branches {
        let (probability, exact) = bw.p.resolve()?;
        if probability <= 0.0 || !probability.is_finite() {
            return Err(Error::InvalidModel(format!(
                "branch probability must be strictly positive, got {probability}"
            )));
        }
        prob_sum += probability;
        exact_fractions.push(exact);
        if bw.dx.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: bw.dx.len() });
        }
        if !bw.dx.iter().all(|&x| x.is_finite() && x > -1.0) {
            return Err(Error::InvalidModel(
                "every jump component must be finite and greater than -1".into(),
            ));
        }
        let child = build_node(nodes, parents, bw.child, Some(id), depth + 1, dim)?;
        branches.push(Branch {
            probability,
            exact,
            jump: DVector::from_vec(bw.dx),
            child,
        });
    }

    if exact_fractions.iter().all(|e| e.is_some()) {
        // all-rational branch law: check the sum in integer arithmetic
        let fracs: Vec<(u64, u64)> = exact_fractions.iter().map(|e| e.unwrap()).collect();
        let den_product: i128 = fracs.iter().map(|&(_, d)| d as i128).product();
        let num_sum: i128 = fracs
            .iter()
            .enumerate()
            .map(|(i, &(n, _))| {
                let others: i128 = fracs
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &(_, d))| d as i128)
                    .product();
                n as i128 * others
            })
            .sum();
        if num_sum != den_product {
            return Err(Error::InvalidModel(
                "exact branch probabilities do not sum to 1".into(),
            ));
        }
    } else if (prob_sum - 1.0).abs() > 1e-14 {
        return Err(Error::InvalidModel(format!(
            "branch probabilities sum to {prob_sum}, expected 1"
        )));
    }

    nodes[id].branches = branches;
    Ok(id)
}

// ---------------------------------------------------------------------------
// one-step expectation checks
// ---------------------------------------------------------------------------

/// Pointwise comparison of a node process against its one-step conditional
/// expectations, over every internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleCheck {
    /// max over internal nodes of E[next] - current; ≤ 0 (up to tolerance)
    /// for a supermartingale.
    pub max_excess: f64,
    pub worst_excess_node: usize,
    /// max over internal nodes of |E[next] - current|; ≈ 0 for a martingale.
    pub max_abs_gap: f64,
    pub worst_gap_node: usize,
}

impl MartingaleCheck {
    pub fn is_supermartingale(&self, tol: f64) -> bool {
        self.max_excess <= tol
    }

    pub fn is_martingale(&self, tol: f64) -> bool {
        self.max_abs_gap <= tol
    }
}

/// Compares `values` with its one-step expectations at every internal node.
pub fn one_step_expectation_check(model: &LatticeModel, values: &[f64]) -> Result<MartingaleCheck> {
    if values.len() != model.num_nodes() {
        return Err(Error::Internal(format!(
            "{} values for {} nodes",
            values.len(),
            model.num_nodes()
        )));
    }
    let mut check = MartingaleCheck {
        max_excess: f64::NEG_INFINITY,
        worst_excess_node: 0,
        max_abs_gap: 0.0,
        worst_gap_node: 0,
    };
    let mut any = false;
    for id in model.internal_nodes() {
        any = true;
        let expected = model.conditional_expectation(values, id)?;
        let excess = expected - values[id];
        if excess > check.max_excess {
            check.max_excess = excess;
            check.worst_excess_node = id;
        }
        if excess.abs() > check.max_abs_gap {
            check.max_abs_gap = excess.abs();
            check.worst_gap_node = id;
        }
    }
    if !any {
        check.max_excess = 0.0;
    }
    Ok(check)
}

// ---------------------------------------------------------------------------
// exhaustive unbounded-profit search
// ---------------------------------------------------------------------------

/// Evidence row for one strategy scale: how big the best terminal wealth
/// gets and how much probability sits on a strict gain.
#[derive(Debug, Clone, PartialEq)]
pub struct EscapeRow {
    pub scale: f64,
    pub max_terminal_wealth: f64,
    pub gain_probability: f64,
}

#[derive(Debug, Clone)]
pub enum NupbrVerdict {
    /// No node admits an immediate-arbitrage direction, so scaled one-shot
    /// strategies cannot escape every probability bound.
    Holds { nodes_checked: usize },
    /// An arbitrage direction exists; scaling it produces terminal wealth
    /// that grows without bound while never risking the initial capital.
    Fails { node: usize, direction: DVector<f64>, escape: Vec<EscapeRow> },
}

pub const DEFAULT_PROFIT_SCALES: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

/// Decides, by exhaustive per-node search, whether the lattice admits scaled
/// strategies with unbounded profit at bounded risk. Only trees within the
/// oracle caps are accepted; this is the slow reference answer the faster
/// cone machinery is checked against.
pub fn brute_force_unbounded_profit(
    model: &LatticeModel,
    scales: &[f64],
) -> Result<NupbrVerdict> {
    if model.max_depth() > ORACLE_MAX_DEPTH {
        return Err(Error::ScaleLimit(format!(
            "profit oracle handles depth ≤ {ORACLE_MAX_DEPTH}, tree has {}",
            model.max_depth()
        )));
    }
    if model.max_branching() > ORACLE_MAX_BRANCHING {
        return Err(Error::ScaleLimit(format!(
            "profit oracle handles branching ≤ {ORACLE_MAX_BRANCHING}, tree has {}",
            model.max_branching()
        )));
    }
    let mut nodes_checked = 0;
    for id in model.internal_nodes() {
        nodes_checked += 1;
        let lc = model.node_characteristic(id)?;
        let Some(witness) = cones::find_immediate_arbitrage(&lc)? else { continue };
        let mut escape = Vec::with_capacity(scales.len());
        for &k in scales {
            let mut pi = vec![DVector::zeros(model.dim()); model.num_nodes()];
            pi[id] = &witness.direction * k;
            let wealth = model.wealth_path(&pi)?;
            let terminal = model.terminal_distribution(&wealth);
            let max_terminal_wealth =
                terminal.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
            let gain_probability = terminal
                .iter()
                .filter(|&&(_, v)| v > 1.0 + 1e-12)
                .map(|&(p, _)| p)
                .sum();
            escape.push(EscapeRow { scale: k, max_terminal_wealth, gain_probability });
        }
        return Ok(NupbrVerdict::Fails { node: id, direction: witness.direction, escape });
    }
    Ok(NupbrVerdict::Holds { nodes_checked })
}

// ---------------------------------------------------------------------------
// wire format
//
// {"dim": 1, "S0": [1.0], "root": {"branches": [{"p": 0.6, "dx": [0.1],
//  "child": {}}, {"p": "2/5", "dx": [-0.1], "child": {}}], "dG": 1.0}}
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct LatticeWire {
    pub dim: usize,
    #[serde(rename = "S0")]
    pub s0: Vec<f64>,
    pub root: NodeWire,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeWire {
    #[serde(default)]
    pub branches: Vec<BranchWire>,
    #[serde(rename = "dG", default = "default_d_g")]
    pub d_g: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BranchWire {
    pub p: ProbWire,
    pub dx: Vec<f64>,
    pub child: NodeWire,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbWire {
    Real(f64),
    Ratio(String),
}

impl ProbWire {
    fn resolve(&self) -> Result<(f64, Option<(u64, u64)>)> {
        match self {
            ProbWire::Real(p) => Ok((*p, None)),
            ProbWire::Ratio(s) => {
                let (num, den) = s
                    .split_once('/')
                    .ok_or_else(|| Error::Schema(format!("'{s}' is not of the form a/b")))?;
                let num: u64 = num
                    .trim()
                    .parse()
                    .map_err(|_| Error::Schema(format!("bad numerator in '{s}'")))?;
                let den: u64 = den
                    .trim()
                    .parse()
                    .map_err(|_| Error::Schema(format!("bad denominator in '{s}'")))?;
                if den == 0 || num == 0 {
                    return Err(Error::Schema(format!("'{s}' is not a positive fraction")));
                }
                Ok((num as f64 / den as f64, Some((num, den))))
            }
        }
    }
}

fn default_d_g() -> f64 {
    1.0
}

pub fn parse_lattice(json: &str) -> Result<LatticeModel> {
    let wire: LatticeWire =
        serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    LatticeModel::from_wire(wire)
}

pub fn lattice_to_wire(model: &LatticeModel) -> LatticeWire {
    fn node_to_wire(model: &LatticeModel, id: usize) -> NodeWire {
        let node = model.node(id);
        NodeWire {
            branches: node
                .branches
                .iter()
                .map(|b| BranchWire {
                    p: match b.exact {
                        Some((n, d)) => ProbWire::Ratio(format!("{n}/{d}")),
                        None => ProbWire::Real(b.probability),
                    },
                    dx: b.jump.iter().copied().collect(),
                    child: node_to_wire(model, b.child),
                })
                .collect(),
            d_g: node.d_g,
        }
    }
    LatticeWire {
        dim: model.dim(),
        s0: model.s0().iter().copied().collect(),
        root: node_to_wire(model, 0),
    }
}

#[cfg(test)]
pub(crate) fn kelly_json() -> &'static str {
    r#"{
        "dim": 1,
        "S0": [1.0],
        "root": {
            "branches": [
                {"p": 0.6, "dx": [0.1], "child": {
                    "branches": [
                        {"p": 0.6, "dx": [0.1], "child": {}},
                        {"p": 0.4, "dx": [-0.1], "child": {}}
                    ],
                    "dG": 1.0
                }},
                {"p": 0.4, "dx": [-0.1], "child": {
                    "branches": [
                        {"p": 0.6, "dx": [0.1], "child": {}},
                        {"p": 0.4, "dx": [-0.1], "child": {}}
                    ],
                    "dG": 1.0
                }}
            ],
            "dG": 1.0
        }
    }"#
}

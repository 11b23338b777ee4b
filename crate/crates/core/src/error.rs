//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while building models or running the
/// numeraire / deflator machinery. Verdicts that are expected outcomes
/// (immediate arbitrage found, LP infeasible as a decision result) are *not*
/// errors; they are encoded in the result types of the relevant operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("node {node} is a leaf and has no branch law")]
    LeafNode { node: usize },

    #[error("nonpositive wealth factor at node {node}, branch {branch}: portfolio leaves the admissible cone")]
    NonpositiveWealth { node: usize, branch: usize },

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("model exceeds exact-engine limits: {0}")]
    ScaleLimit(String),

    #[error("linear program solver failed: {0}")]
    LpFailure(String),

    #[error("growth maximiser did not converge after {iterations} iterations (projected gradient norm {gradient_norm:.3e}, last iterate {last_iterate:?})")]
    NoConvergence { iterations: usize, gradient_norm: f64, last_iterate: Vec<f64> },

    #[error("internal inconsistency: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Finite atomic measures on R^d.
//!
//! The jump part of every model here is a measure with finitely many atoms,
//! so integrals are finite sums and all the usual measure operations
//! (restriction, translation, total variation) are exact. A measure also
//! carries a support envelope: a declared-unbounded measure is treated as if
//! arbitrarily large jumps were possible in every direction, even though only
//! finitely many atoms are listed. That declaration is what collapses the
//! admissible portfolio cone to {0}.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared support envelope of a measure.
///
/// `Bounded` means the atoms are the whole story. `UnboundedAllDirections`
/// means the listed atoms stand in for a measure whose support reaches
/// arbitrarily far out in every direction of R^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupportEnvelope {
    #[serde(rename = "bounded")]
    Bounded,
    #[serde(rename = "unbounded")]
    UnboundedAllDirections,
}

/// One weighted atom: a point in R^d with a strictly positive weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub point: DVector<f64>,
    pub weight: f64,
}

/// A finite measure Σ wᵢ δ_{xᵢ} on R^d with pairwise distinct atoms and
/// strictly positive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureWire", into = "MeasureWire")]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Atom>,
    envelope: SupportEnvelope,
}

/// Canonical bit-pattern key for an atom location. Collapses -0.0 to 0.0 so
/// the two float zeros name the same point; NaN never reaches this function
/// because construction rejects it.
pub(crate) fn point_key(p: &DVector<f64>) -> Vec<u64> {
    p.iter().map(|&x| (x + 0.0).to_bits()).collect()
}

impl DiscreteMeasure {
    /// Builds a measure, enforcing the atom invariants. Fails on dimension
    /// mismatches, nonpositive or nonfinite weights, nonfinite coordinates,
    /// and duplicate atom locations.
    pub fn new(dim: usize, atoms: Vec<Atom>, envelope: SupportEnvelope) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be at least 1".into()));
        }
        let mut seen = BTreeMap::new();
        for (i, atom) in atoms.iter().enumerate() {
            if atom.point.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: atom.point.len() });
            }
            if !atom.point.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidMeasure(format!("atom {i} has a nonfinite coordinate")));
            }
            if atom.weight <= 0.0 || !atom.weight.is_finite() {
                return Err(Error::InvalidMeasure(format!(
                    "atom {i} has weight {}, expected a finite positive value",
                    atom.weight
                )));
            }
            if let Some(j) = seen.insert(point_key(&atom.point), i) {
                return Err(Error::InvalidMeasure(format!("atoms {j} and {i} share a location")));
            }
        }
        Ok(Self { dim, atoms, envelope })
    }

    /// The zero measure on R^d.
    pub fn zero(dim: usize) -> Self {
        Self { dim, atoms: Vec::new(), envelope: SupportEnvelope::Bounded }
    }

    /// Builds a measure from possibly colliding locations, summing weights of
    /// atoms that land on the same point. Atom order follows first occurrence.
    pub fn from_atoms_merging<I>(dim: usize, atoms: I, envelope: SupportEnvelope) -> Result<Self>
    where
        I: IntoIterator<Item = Atom>,
    {
        let mut order: Vec<Vec<u64>> = Vec::new();
        let mut merged: BTreeMap<Vec<u64>, Atom> = BTreeMap::new();
        for atom in atoms {
            if atom.weight == 0.0 {
                continue;
            }
            let key = point_key(&atom.point);
            match merged.get_mut(&key) {
                Some(existing) => existing.weight += atom.weight,
                None => {
                    order.push(key.clone());
                    merged.insert(key, atom);
                }
            }
        }
        let atoms = order.into_iter().map(|k| merged.remove(&k).unwrap()).collect();
        Self::new(dim, atoms, envelope)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn envelope(&self) -> SupportEnvelope {
        self.envelope
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total mass Σ wᵢ.
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// ∫ f dμ = Σ wᵢ f(xᵢ).
    pub fn integrate<F: Fn(&DVector<f64>) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|a| a.weight * f(&a.point)).sum()
    }

    /// μ{x : pred(x)}, the mass of the set cut out by a predicate.
    pub fn mass_where<F: Fn(&DVector<f64>) -> bool>(&self, pred: F) -> f64 {
        self.atoms.iter().filter(|a| pred(&a.point)).map(|a| a.weight).sum()
    }

    /// Convolution with a Dirac at `shift`: every atom moves by `shift`, the
    /// weights stay put. Distinct atoms that round to the same shifted
    /// location are merged.
    pub fn convolve_dirac(&self, shift: &DVector<f64>) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: shift.len() });
        }
        Self::from_atoms_merging(
            self.dim,
            self.atoms.iter().map(|a| Atom { point: &a.point + shift, weight: a.weight }),
            self.envelope,
        )
    }

    /// Splits off the tail {|x| > r} (Euclidean norm, strict inequality).
    /// Returns the tail mass together with the restricted measure; atoms with
    /// |x| = r stay inside.
    pub fn tail_beyond_radius(&self, r: f64) -> (f64, Self) {
        assert!(r > 0.0, "tail radius must be positive");
        let tail: Vec<Atom> =
            self.atoms.iter().filter(|a| a.point.norm() > r).cloned().collect();
        let mass = tail.iter().map(|a| a.weight).sum();
        (mass, Self { dim: self.dim, atoms: tail, envelope: self.envelope })
    }

    /// ∫ x dμ as a vector; the zero vector for the zero measure.
    pub fn barycenter(&self) -> DVector<f64> {
        let mut sum = DVector::zeros(self.dim);
        for a in &self.atoms {
            sum.axpy(a.weight, &a.point, 1.0);
        }
        sum
    }

    /// Total variation distance Σ |μ{x} - η{x}| over the union of atom
    /// locations (unnormalised L1 convention).
    pub fn tv_distance(&self, other: &Self) -> Result<f64> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let mut weights: BTreeMap<Vec<u64>, (f64, f64)> = BTreeMap::new();
        for a in &self.atoms {
            weights.entry(point_key(&a.point)).or_insert((0.0, 0.0)).0 += a.weight;
        }
        for a in &other.atoms {
            weights.entry(point_key(&a.point)).or_insert((0.0, 0.0)).1 += a.weight;
        }
        Ok(weights.values().map(|(w1, w2)| (w1 - w2).abs()).sum())
    }

    /// Weight sitting exactly on `point`, 0 if there is no such atom.
    pub fn weight_at(&self, point: &DVector<f64>) -> f64 {
        let key = point_key(point);
        self.atoms
            .iter()
            .find(|a| point_key(&a.point) == key)
            .map(|a| a.weight)
            .unwrap_or(0.0)
    }

    /// Reweights every atom by a strictly positive factor supplied per atom
    /// (in atom order). Used to apply a density.
    pub fn reweighted(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.atoms.len() {
            return Err(Error::Internal(format!(
                "density table has {} entries for {} atoms",
                factors.len(),
                self.atoms.len()
            )));
        }
        let atoms = self
            .atoms
            .iter()
            .zip(factors)
            .map(|(a, &f)| Atom { point: a.point.clone(), weight: a.weight * f })
            .collect();
        Self::new(self.dim, atoms, self.envelope)
    }
}

// ---------------------------------------------------------------------------
// wire format
//
// {"dim": 2, "atoms": [[[0.1, -0.2], 0.6], ...], "support": "bounded"}
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MeasureWire {
    dim: usize,
    atoms: Vec<(Vec<f64>, f64)>,
    support: SupportEnvelope,
}

impl TryFrom<MeasureWire> for DiscreteMeasure {
    type Error = Error;

    fn try_from(w: MeasureWire) -> Result<Self> {
        let atoms = w
            .atoms
            .into_iter()
            .map(|(point, weight)| Atom { point: DVector::from_vec(point), weight })
            .collect();
        DiscreteMeasure::new(w.dim, atoms, w.support)
    }
}

impl From<DiscreteMeasure> for MeasureWire {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureWire {
            dim: m.dim,
            atoms: m
                .atoms
                .into_iter()
                .map(|a| (a.point.iter().copied().collect(), a.weight))
                .collect(),
            support: m.envelope,
        }
    }
}

//! Local model data: drift, covariance, jump measure, and the time grids
//! they live on.
//!
//! A `LocalCharacteristic` is the triple (b, c, ν) describing one slice of a
//! market in local terms relative to a reference increment dG: b is the drift
//! rate of the small-jump-truncated returns, c the quadratic covariation
//! rate, ν the jump intensity measure. Everything downstream (cones, growth
//! optimisation, deflators) reads a market through this interface, whether
//! the market came in as an explicit grid of slices or was derived from a
//! lattice node.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

/// Jump sizes with Euclidean norm at or below this are the "small" jumps that
/// the truncated drift b already accounts for.
pub const TRUNCATION_RADIUS: f64 = 1.0;

/// One slice of local dynamics: drift rate b, covariance rate c, jump
/// intensity ν, all per unit of the reference increment dG.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCharacteristic {
    dim: usize,
    b: DVector<f64>,
    c: DMatrix<f64>,
    nu: DiscreteMeasure,
    d_g: f64,
}

impl LocalCharacteristic {
    /// Builds a slice, checking shapes and finiteness. Symmetry and positive
    /// semidefiniteness of c are *not* enforced here; `validate` reports on
    /// them so that callers can decide what to do with a questionable input.
    pub fn new(b: DVector<f64>, c: DMatrix<f64>, nu: DiscreteMeasure, d_g: f64) -> Result<Self> {
        let dim = b.len();
        if dim == 0 {
            return Err(Error::InvalidModel("characteristic dimension must be at least 1".into()));
        }
        if c.nrows() != dim || c.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: c.nrows().max(c.ncols()) });
        }
        if nu.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: nu.dim() });
        }
        if !b.iter().all(|x| x.is_finite()) || !c.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidModel("characteristic entries must be finite".into()));
        }
        if d_g <= 0.0 || !d_g.is_finite() {
            return Err(Error::InvalidModel(format!("dG must be a positive real, got {d_g}")));
        }
        Ok(Self { dim, b, c, nu, d_g })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn nu(&self) -> &DiscreteMeasure {
        &self.nu
    }

    pub fn d_g(&self) -> f64 {
        self.d_g
    }

    /// ∫ x 1_{|x| ≤ 1} ν(dx): the mean of the small jumps.
    pub fn small_jump_mean(&self) -> DVector<f64> {
        let mut sum = DVector::zeros(self.dim);
        for a in self.nu.atoms() {
            if a.point.norm() <= TRUNCATION_RADIUS {
                sum.axpy(a.weight, &a.point, 1.0);
            }
        }
        sum
    }

    /// The total drift rate b + ∫ x 1_{|x| > 1} ν(dx); with finitely many
    /// atoms the large-jump integral always exists.
    pub fn drift_rate(&self) -> DVector<f64> {
        let (_, tail) = self.nu.tail_beyond_radius(TRUNCATION_RADIUS);
        self.b.clone() + tail.barycenter()
    }

    /// Structural diagnostics that are warnings-or-findings rather than hard
    /// construction failures.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();

        let mut asymmetry: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                asymmetry = asymmetry.max((self.c[(i, j)] - self.c[(j, i)]).abs());
            }
        }
        let scale = self.c.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        if asymmetry > 1e-12 * scale {
            violations.push(Violation::AsymmetricCovariance { deviation: asymmetry });
        }

        let sym = (&self.c + self.c.transpose()) * 0.5;
        let eigen = sym.symmetric_eigenvalues();
        let min_eigenvalue = eigen.iter().copied().fold(f64::INFINITY, f64::min);
        if min_eigenvalue < -1e-10 * scale {
            violations.push(Violation::IndefiniteCovariance { min_eigenvalue });
        }

        let jump_second_moment =
            self.nu.integrate(|x| x.norm_squared().min(1.0));
        if !jump_second_moment.is_finite() {
            violations.push(Violation::DivergentJumpIntegral { value: jump_second_moment });
        }

        ValidationReport { violations, min_eigenvalue, jump_second_moment }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    AsymmetricCovariance { deviation: f64 },
    IndefiniteCovariance { min_eigenvalue: f64 },
    DivergentJumpIntegral { value: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::AsymmetricCovariance { deviation } => {
                write!(f, "covariance is asymmetric (max deviation {deviation:.3e})")
            }
            Violation::IndefiniteCovariance { min_eigenvalue } => {
                write!(f, "covariance has a negative eigenvalue ({min_eigenvalue:.3e})")
            }
            Violation::DivergentJumpIntegral { value } => {
                write!(f, "jump second moment is not finite ({value})")
            }
        }
    }
}

/// Outcome of `LocalCharacteristic::validate`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub min_eigenvalue: f64,
    pub jump_second_moment: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A finite sequence of slices on strictly increasing times, plus a horizon
/// marking how far the deflator construction should run.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicGrid {
    times: Vec<f64>,
    slices: Vec<LocalCharacteristic>,
    horizon_index: usize,
}

impl CharacteristicGrid {
    pub fn new(times: Vec<f64>, slices: Vec<LocalCharacteristic>, horizon_index: usize) -> Result<Self> {
        if times.len() != slices.len() {
            return Err(Error::InvalidModel(format!(
                "{} times for {} slices",
                times.len(),
                slices.len()
            )));
        }
        if slices.is_empty() {
            return Err(Error::InvalidModel("grid must contain at least one slice".into()));
        }
        if !times.iter().all(|t| t.is_finite()) || times[0] < 0.0 {
            return Err(Error::InvalidModel("times must be finite and start at or after 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidModel("times must be strictly increasing".into()));
        }
        if horizon_index >= slices.len() {
            return Err(Error::InvalidModel("horizon index past the end of the grid".into()));
        }
        let dim = slices[0].dim();
        if slices.iter().any(|s| s.dim() != dim) {
            return Err(Error::InvalidModel("all slices must share one dimension".into()));
        }
        Ok(Self { times, slices, horizon_index })
    }

    pub fn dim(&self) -> usize {
        self.slices[0].dim()
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn slices(&self) -> &[LocalCharacteristic] {
        &self.slices
    }

    pub fn horizon_index(&self) -> usize {
        self.horizon_index
    }

    pub fn horizon_time(&self) -> f64 {
        self.times[self.horizon_index]
    }

    /// The slices at or before the horizon, the ones the deflator covers.
    pub fn active_slices(&self) -> &[LocalCharacteristic] {
        &self.slices[..=self.horizon_index]
    }
}

// ---------------------------------------------------------------------------
// wire format
//
// {"times": [...], "horizon": t, "slices": [{"b": [...], "c": [[...], ...],
//  "nu": {...}, "dG": g}, ...]}
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct GridWire {
    pub times: Vec<f64>,
    pub horizon: f64,
    pub slices: Vec<SliceWire>,
}

#[derive(Serialize, Deserialize)]
pub struct SliceWire {
    pub b: Vec<f64>,
    pub c: Vec<Vec<f64>>,
    pub nu: DiscreteMeasure,
    #[serde(rename = "dG")]
    pub d_g: f64,
}

/// Parses a grid from JSON. Asymmetric covariance blocks are averaged with
/// their transpose on the way in; each such repair is reported as a warning
/// string rather than silently accepted or rejected.
pub fn parse_grid(json: &str) -> Result<(CharacteristicGrid, Vec<String>)> {
    let wire: GridWire = serde_json::from_str(json).map_err(|e| Error::Schema(e.to_string()))?;
    grid_from_wire(wire)
}

pub fn grid_from_wire(wire: GridWire) -> Result<(CharacteristicGrid, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut slices = Vec::with_capacity(wire.slices.len());
    for (i, s) in wire.slices.into_iter().enumerate() {
        let dim = s.b.len();
        if s.c.len() != dim || s.c.iter().any(|row| row.len() != dim) {
            return Err(Error::Schema(format!("slice {i}: c must be a {dim}x{dim} matrix")));
        }
        let mut c = DMatrix::zeros(dim, dim);
        for (r, row) in s.c.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                c[(r, k)] = v;
            }
        }
        let asymmetry = (0..dim)
            .flat_map(|r| (0..dim).map(move |k| (r, k)))
            .fold(0.0f64, |m, (r, k)| m.max((c[(r, k)] - c[(k, r)]).abs()));
        if asymmetry > 0.0 {
            warnings.push(format!(
                "slice {i}: covariance asymmetry {asymmetry:.3e} averaged with its transpose"
            ));
            c = (&c + c.transpose()) * 0.5;
        }
        slices.push(LocalCharacteristic::new(DVector::from_vec(s.b), c, s.nu, s.d_g)?);
    }
    let horizon_index = wire
        .times
        .iter()
        .position(|&t| t == wire.horizon)
        .ok_or_else(|| Error::Schema(format!("horizon {} is not one of the grid times", wire.horizon)))?;
    let grid = CharacteristicGrid::new(wire.times, slices, horizon_index)?;
    Ok((grid, warnings))
}

pub fn grid_to_wire(grid: &CharacteristicGrid) -> GridWire {
    GridWire {
        times: grid.times.clone(),
        horizon: grid.horizon_time(),
        slices: grid
            .slices
            .iter()
            .map(|s| SliceWire {
                b: s.b().iter().copied().collect(),
                c: (0..s.dim())
                    .map(|r| (0..s.dim()).map(|k| s.c()[(r, k)]).collect())
                    .collect(),
                nu: s.nu().clone(),
                d_g: s.d_g(),
            })
            .collect(),
    }
}

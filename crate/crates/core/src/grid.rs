//! Finite measure spaces as weighted grids.
//!
//! A [`MeasureGrid`] is a list of agent nodes carrying strictly positive
//! weights that sum to one. Every integral over the agent space becomes a
//! weighted sum over the nodes, so `∫ φ dν` is `Σᵢ wᵢ φ(tᵢ)`.
//!
//! Uniform grids use the midpoint rule on `[0, 1]`: node `i` sits at
//! `(i + 0.5) / n` with weight `1 / n`. Arbitrary finite populations are
//! expressed through explicit weight lists.

use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights must sum to one within this tolerance.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Weighted grid discretizing a normalized measure space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct MeasureGrid {
    coords: Option<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<GridRepr> for MeasureGrid {
    type Error = Error;

    fn try_from(repr: GridRepr) -> Result<Self> {
        MeasureGrid::new(repr.coords, repr.weights)
    }
}

impl From<MeasureGrid> for GridRepr {
    fn from(grid: MeasureGrid) -> Self {
        GridRepr {
            coords: grid.coords,
            weights: grid.weights,
        }
    }
}

impl MeasureGrid {
    /// Builds a grid from explicit weights (and optional coordinates),
    /// validating positivity and unit mass.
    pub fn new(coords: Option<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyGrid);
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidGrid(format!(
                    "weight {i} must be finite and strictly positive, got {w}"
                )));
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidGrid(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        if let Some(c) = &coords {
            if c.len() != weights.len() {
                return Err(Error::LengthMismatch {
                    expected: weights.len(),
                    actual: c.len(),
                });
            }
            if let Some(i) = c.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("coordinate {i}")));
            }
        }
        Ok(Self { coords, weights })
    }

    /// Midpoint grid on `[0, 1]` with `n` equal cells.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGrid);
        }
        let h = 1.0 / n as f64;
        let coords = (0..n).map(|i| (i as f64 + 0.5) * h).collect();
        Ok(Self {
            coords: Some(coords),
            weights: vec![h; n],
        })
    }

    /// Rescales arbitrary positive masses to a probability measure.
    pub fn from_masses(coords: Option<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if let Some(i) = masses.iter().position(|m| !m.is_finite() || *m <= 0.0) {
            return Err(Error::InvalidGrid(format!(
                "mass {i} must be finite and strictly positive"
            )));
        }
        let total: f64 = masses.iter().sum();
        let weights = masses.iter().map(|m| m / total).collect();
        Self::new(coords, weights)
    }

    /// Reads node weights from CSV, one row per node. Rows hold either a
    /// single `weight` column or `coord,weight`. A header row is optional.
    /// Masses are renormalized to one.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut coords = Vec::new();
        let mut masses = Vec::new();
        let mut width = None;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let fields: Vec<&str> = rec.iter().filter(|f| !f.is_empty()).collect();
            if fields.is_empty() {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> =
                fields.iter().map(|f| f.parse::<f64>()).collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if row == 0 => continue,
                Err(e) => {
                    return Err(Error::InvalidInput(format!("row {row}: {e}")));
                }
            };
            match (width, values.len()) {
                (None, w @ (1 | 2)) => width = Some(w),
                (Some(w), l) if w == l => {}
                (_, l) => {
                    return Err(Error::InvalidInput(format!(
                        "row {row}: expected 1 or 2 columns consistently, got {l}"
                    )))
                }
            }
            if values.len() == 2 {
                coords.push(values[0]);
                masses.push(values[1]);
            } else {
                masses.push(values[0]);
            }
        }
        let coords = (width == Some(2)).then_some(coords);
        Self::from_masses(coords, masses)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }

    pub fn coords(&self) -> Option<&[f64]> {
        self.coords.as_deref()
    }

    /// Coordinate of node `i`, falling back to the node index.
    pub fn coord(&self, i: usize) -> f64 {
        match &self.coords {
            Some(c) => c[i],
            None => i as f64,
        }
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = self.weights[0];
        self.weights.iter().all(|&w| (w - w0).abs() <= 1e-15)
    }

    /// Total weight of a node subset.
    pub fn mass_of(&self, nodes: &[usize]) -> f64 {
        nodes.iter().map(|&i| self.weights[i]).sum()
    }

    pub fn into_shared(self) -> Arc<MeasureGrid> {
        Arc::new(self)
    }
}

/// True when two grid handles describe the same measure space.
pub fn same_grid(a: &MeasureGrid, b: &MeasureGrid) -> bool {
    std::ptr::eq(a, b) || a == b
}

pub(crate) fn ensure_same_grid(a: &MeasureGrid, b: &MeasureGrid, what: &str) -> Result<()> {
    if same_grid(a, b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(what.to_string()))
    }
}

/// Real-valued function sampled at the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<MeasureGrid>,
    values: DVector<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<MeasureGrid>, values: Vec<f64>) -> Result<Self> {
        Self::from_vector(grid, DVector::from_vec(values))
    }

    pub fn from_vector(grid: Arc<MeasureGrid>, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid function value {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Arc<MeasureGrid>, c: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![c; n])
    }

    /// Samples `f` at each node's coordinate.
    pub fn from_fn(grid: Arc<MeasureGrid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(grid.coord(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<MeasureGrid> {
        &self.grid
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// `Σᵢ wᵢ f(tᵢ)`.
    pub fn integrate(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(self.values.iter())
            .map(|(w, v)| w * v)
            .sum()
    }

    /// `⟨f, g⟩ = Σᵢ wᵢ f(tᵢ) g(tᵢ)`.
    pub fn inner_product(&self, other: &GridFunction) -> Result<f64> {
        ensure_same_grid(&self.grid, &other.grid, "inner product operands")?;
        Ok(self
            .grid
            .weights()
            .iter()
            .zip(self.values.iter().zip(other.values.iter()))
            .map(|(w, (a, b))| w * a * b)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.grid
            .weights()
            .iter()
            .zip(self.values.iter())
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `a·self + b·other`.
    pub fn linear_combination(&self, a: f64, other: &GridFunction, b: f64) -> Result<Self> {
        ensure_same_grid(&self.grid, &other.grid, "linear combination operands")?;
        Self::from_vector(self.grid.clone(), &self.values * a + &other.values * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }
}

/// Free-function form of [`GridFunction::integrate`].
pub fn integrate(f: &GridFunction) -> f64 {
    f.integrate()
}

/// Free-function form of [`GridFunction::inner_product`].
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    f.inner_product(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_grid_layout() {
        let g = MeasureGrid::uniform(1).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.weights(), &[1.0]);

        let g = MeasureGrid::uniform(4).unwrap();
        assert_eq!(g.coords().unwrap(), &[0.125, 0.375, 0.625, 0.875]);
        assert!(g.weights().iter().all(|&w| w == 0.25));

        let g = MeasureGrid::uniform(10).unwrap();
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(matches!(MeasureGrid::uniform(0), Err(Error::EmptyGrid)));
        assert!(MeasureGrid::new(None, vec![0.5, 0.4]).is_err());
        assert!(MeasureGrid::new(None, vec![1.5, -0.5]).is_err());
        assert!(MeasureGrid::new(Some(vec![0.0]), vec![0.5, 0.5]).is_err());
        assert!(MeasureGrid::new(None, vec![]).is_err());
    }

    #[test]
    fn integrates_basic_functions() {
        let g = MeasureGrid::uniform(7).unwrap().into_shared();
        let one = GridFunction::constant(g.clone(), 1.0).unwrap();
        assert!((one.integrate() - 1.0).abs() < 1e-15);
        assert!((one.inner_product(&one).unwrap() - 1.0).abs() < 1e-15);

        let g4 = MeasureGrid::uniform(4).unwrap().into_shared();
        let t = GridFunction::from_fn(g4, |t| t).unwrap();
        assert!((t.integrate() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn midpoint_rule_matches_analytic_integrals() {
        let g = MeasureGrid::uniform(1000).unwrap().into_shared();
        let t2 = GridFunction::from_fn(g.clone(), |t| t * t).unwrap();
        assert!((t2.integrate() - 1.0 / 3.0).abs() < 1e-6);
        let t = GridFunction::from_fn(g, |t| t).unwrap();
        assert!((t.inner_product(&t).unwrap() - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn midpoint_error_is_second_order() {
        // ∫₀¹ exp(t) dt = e − 1
        let exact = std::f64::consts::E - 1.0;
        let err = |n: usize| {
            let g = MeasureGrid::uniform(n).unwrap().into_shared();
            (GridFunction::from_fn(g, f64::exp).unwrap().integrate() - exact).abs()
        };
        for n in [10, 20, 40, 80] {
            let ratio = err(n) / err(2 * n);
            assert!((ratio - 4.0).abs() < 0.05, "n={n} ratio={ratio}");
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = GridFunction::constant(MeasureGrid::uniform(3).unwrap().into_shared(), 1.0).unwrap();
        let b = GridFunction::constant(MeasureGrid::uniform(4).unwrap().into_shared(), 1.0).unwrap();
        assert!(matches!(a.inner_product(&b), Err(Error::GridMismatch(_))));
        let g = MeasureGrid::uniform(3).unwrap().into_shared();
        assert!(GridFunction::new(g, vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn json_and_csv_formats() {
        let g = MeasureGrid::uniform(3).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.starts_with("{\"coords\":"));
        let back: MeasureGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);

        let bad = r#"{"weights":[0.2,0.2]}"#;
        assert!(serde_json::from_str::<MeasureGrid>(bad).is_err());
        let unknown = r#"{"weights":[1.0],"extra":1}"#;
        assert!(serde_json::from_str::<MeasureGrid>(unknown).is_err());

        let csv = "weight\n1\n1\n2\n";
        let g = MeasureGrid::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(g.weights(), &[0.25, 0.25, 0.5]);
        assert!(g.coords().is_none());
        let csv = "0.1,1\n0.9,3\n";
        let g = MeasureGrid::from_csv_reader(csv.as_bytes()).unwrap();
        assert_eq!(g.coords().unwrap(), &[0.1, 0.9]);
        assert_eq!(g.weights(), &[0.25, 0.75]);
    }

    fn random_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(0.01f64..5.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn integral_is_linear((m, f, g) in random_pair(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let grid = MeasureGrid::from_masses(None, m).unwrap().into_shared();
            let f = GridFunction::new(grid.clone(), f).unwrap();
            let g = GridFunction::new(grid, g).unwrap();
            let lhs = f.linear_combination(a, &g, b).unwrap().integrate();
            let rhs = a * f.integrate() + b * g.integrate();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn inner_product_is_psd_and_cauchy_schwarz((m, f, g) in random_pair()) {
            let grid = MeasureGrid::from_masses(None, m).unwrap().into_shared();
            let f = GridFunction::new(grid.clone(), f).unwrap();
            let g = GridFunction::new(grid, g).unwrap();
            prop_assert!(f.inner_product(&f).unwrap() >= 0.0);
            let ip = f.inner_product(&g).unwrap();
            prop_assert!(ip.abs() <= f.norm() * g.norm() * (1.0 + 1e-12) + 1e-15);
        }
    }
}

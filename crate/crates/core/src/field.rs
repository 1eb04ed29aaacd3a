//! Scalar fields, vector fields, and probability densities over a space.

use ndarray::Array2;

use crate::error::{arg, Error, Result};
use crate::space::{Backend, MetricMeasureSpace};

/// Mass tolerance for a [`Density`].
pub const MASS_TOL: f64 = 1e-10;

/// Nodal values of a real function.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField(Vec<f64>);

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self(vec![c; n])
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(space: &MetricMeasureSpace, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let g = space.require_grid("from_fn")?;
        Ok(Self(g.coords().rows().into_iter().map(|r| f(r.as_slice().unwrap())).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn add_constant(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// `∫ f dμ` for a measure given by per-point masses.
    pub fn integrate(&self, masses: &[f64]) -> f64 {
        self.0.iter().zip(masses).map(|(f, m)| f * m).sum()
    }
}

impl std::ops::Index<usize> for ScalarField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Vector field on a space. On grids a row per point (`n × d`); on graphs an
/// antisymmetric edge function stored once per edge as the value of
/// `b(e.i → e.j)`.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorField {
    Grid(Array2<f64>),
    Graph(Vec<f64>),
}

impl VectorField {
    pub fn zeros(space: &MetricMeasureSpace) -> Self {
        match space.backend() {
            Backend::Grid(g) => VectorField::Grid(Array2::zeros((g.len(), g.dim()))),
            Backend::Graph(g) => VectorField::Graph(vec![0.0; g.edges().len()]),
        }
    }

    /// Samples a grid vector field from a closure.
    pub fn from_fn(space: &MetricMeasureSpace, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let g = space.require_grid("VectorField::from_fn")?;
        let mut out = Array2::zeros((g.len(), g.dim()));
        for (i, row) in g.coords().rows().into_iter().enumerate() {
            let v = f(row.as_slice().unwrap());
            if v.len() != g.dim() {
                return arg(format!("vector closure returned {} components, expected {}", v.len(), g.dim()));
            }
            for (a, x) in v.into_iter().enumerate() {
                out[[i, a]] = x;
            }
        }
        Ok(VectorField::Grid(out))
    }

    pub fn grid_values(&self) -> Option<&Array2<f64>> {
        match self {
            VectorField::Grid(a) => Some(a),
            VectorField::Graph(_) => None,
        }
    }

    /// `b(i → j)` on a graph edge oriented as stored or reversed.
    pub fn edge_value(&self, edge: usize, forward: bool) -> Option<f64> {
        match self {
            VectorField::Graph(v) => Some(if forward { v[edge] } else { -v[edge] }),
            VectorField::Grid(_) => None,
        }
    }

    pub fn neg(&self) -> Self {
        match self {
            VectorField::Grid(a) => VectorField::Grid(-a),
            VectorField::Graph(v) => VectorField::Graph(v.iter().map(|x| -x).collect()),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            VectorField::Grid(a) => a.iter().all(|v| v.is_finite()),
            VectorField::Graph(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    /// Checks the field's shape against the space.
    pub fn check(&self, space: &MetricMeasureSpace) -> Result<()> {
        match (self, space.backend()) {
            (VectorField::Grid(a), Backend::Grid(g)) if a.nrows() == g.len() && a.ncols() == g.dim() => Ok(()),
            (VectorField::Graph(v), Backend::Graph(g)) if v.len() == g.edges().len() => Ok(()),
            _ => arg("vector field does not match the space"),
        }
        .and_then(|_| if self.is_finite() { Ok(()) } else { Err(Error::Data("vector field has non-finite entries".into())) })
    }
}

/// Probability density with respect to the reference measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    rho: Vec<f64>,
    compression: f64,
}

impl Density {
    /// Validates nonnegativity and unit mass (within [`MASS_TOL`]).
    pub fn new(space: &MetricMeasureSpace, rho: Vec<f64>) -> Result<Self> {
        if rho.len() != space.len() {
            return arg(format!("density has {} values, space has {} points", rho.len(), space.len()));
        }
        if let Some(i) = rho.iter().position(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Data(format!("density entry {i} is negative or not finite ({})", rho[i])));
        }
        let mass: f64 = rho.iter().zip(space.weights()).map(|(r, w)| r * w).sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Data(format!("density has mass {mass}, expected 1")));
        }
        let compression = rho.iter().copied().fold(0.0, f64::max);
        Ok(Self { rho, compression })
    }

    /// Normalizes a nonnegative profile to unit mass.
    pub fn normalized(space: &MetricMeasureSpace, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != space.len() {
            return arg(format!("profile has {} values, space has {} points", raw.len(), space.len()));
        }
        let mass: f64 = raw.iter().zip(space.weights()).map(|(r, w)| r * w).sum();
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::Data(format!("profile mass {mass} cannot be normalized")));
        }
        Self::new(space, raw.into_iter().map(|r| r / mass).collect())
    }

    /// Builds a density from per-point masses.
    pub fn from_masses(space: &MetricMeasureSpace, masses: &[f64]) -> Result<Self> {
        let rho = masses.iter().zip(space.weights()).map(|(m, w)| m / w).collect();
        Self::normalized(space, rho)
    }

    /// Smooth compactly supported bump `(1 - |x-c|²/w²)³₊` (grid backend).
    pub fn bump(space: &MetricMeasureSpace, center: &[f64], width: f64) -> Result<Self> {
        let g = space.require_grid("Density::bump")?;
        if center.len() != g.dim() || !(width > 0.0) {
            return arg("bump needs a center of the space's dimension and a positive width");
        }
        let raw = g
            .coords()
            .rows()
            .into_iter()
            .map(|x| {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (width * width);
                if r2 < 1.0 - 1e-12 {
                    (1.0 - r2).powi(3)
                } else {
                    0.0
                }
            })
            .collect();
        Self::normalized(space, raw)
    }

    /// Dirac mass at point `i`.
    pub fn point_mass(space: &MetricMeasureSpace, i: usize) -> Result<Self> {
        if i >= space.len() {
            return arg(format!("point {i} out of range"));
        }
        let mut rho = vec![0.0; space.len()];
        rho[i] = 1.0 / space.weights()[i];
        Self::new(space, rho)
    }

    /// Uniform density on the points selected by `pred`.
    pub fn uniform_on(space: &MetricMeasureSpace, pred: impl Fn(usize) -> bool) -> Result<Self> {
        Self::normalized(space, (0..space.len()).map(|i| if pred(i) { 1.0 } else { 0.0 }).collect())
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn compression(&self) -> f64 {
        self.compression
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Per-point masses `ρ_i · m_i`.
    pub fn masses(&self, space: &MetricMeasureSpace) -> Vec<f64> {
        self.rho.iter().zip(space.weights()).map(|(r, w)| r * w).collect()
    }

    /// Indices where the density is positive.
    pub fn support(&self) -> Vec<usize> {
        (0..self.rho.len()).filter(|&i| self.rho[i] > 0.0).collect()
    }

    /// Whether the support stays `layers` cells away from the grid boundary.
    pub fn is_interior(&self, space: &MetricMeasureSpace, layers: usize) -> bool {
        match space.grid() {
            Some(g) => self.support().into_iter().all(|i| g.is_interior_by(i, layers)),
            None => true,
        }
    }
}

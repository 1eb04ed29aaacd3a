//! Discretized metric measure spaces.
//!
//! Two backends are provided. The grid backend is an axis-aligned lattice in
//! ℝ^d with uniform spacing `h` and Euclidean distance; every cell carries the
//! Lebesgue mass `h^d`. The graph backend stores an explicit distance matrix
//! together with an edge list that drives the first-order calculus.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::field::ScalarField;

/// Default cap on the number of points a grid may contain.
pub const DEFAULT_POINT_CAP: usize = 1_000_000;

/// Fractional lattice coordinates closer than this to an integer are snapped.
const SNAP_TOL: f64 = 1e-9;

/// Uniform lattice in ℝ^d. Points are stored row-major with the last axis
/// varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    h: f64,
    shape: Vec<usize>,
    strides: Vec<usize>,
    coords: Array2<f64>,
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// Upper corner actually reached by the lattice (may fall short of the
    /// requested bound when the interval length is not a multiple of `h`).
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).to_vec()
    }

    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (a, &s) in self.strides.iter().enumerate() {
            idx[a] = i / s;
            i %= s;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Index along `axis` of flat point `i`.
    pub fn axis_index(&self, i: usize, axis: usize) -> usize {
        (i / self.strides[axis]) % self.shape[axis]
    }

    /// Neighbour of `i` shifted by `offset` cells along `axis`, if it exists.
    pub fn shift(&self, i: usize, axis: usize, offset: isize) -> Option<usize> {
        let k = self.axis_index(i, axis) as isize + offset;
        if k < 0 || k >= self.shape[axis] as isize {
            return None;
        }
        Some((i as isize + offset * self.strides[axis] as isize) as usize)
    }

    /// A point is interior when it is at least one cell away from every face.
    pub fn is_interior(&self, i: usize) -> bool {
        self.is_interior_by(i, 1)
    }

    /// A point at least `layers` cells away from every face.
    pub fn is_interior_by(&self, i: usize, layers: usize) -> bool {
        (0..self.dim()).all(|a| {
            let k = self.axis_index(i, a);
            k >= layers && k + layers < self.shape[a]
        })
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_interior(i)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(a, &v)| v >= self.lower[a] - SNAP_TOL * self.h && v <= self.upper[a] + SNAP_TOL * self.h)
    }

    /// Multilinear stencil of a point: up to `2^d` (index, weight) pairs whose
    /// weights sum to one. Points outside the lattice are clamped onto it.
    pub fn stencil(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let n = self.shape[a];
            let mut f = (x[a] - self.lower[a]) / self.h;
            let r = f.round();
            if (f - r).abs() < SNAP_TOL {
                f = r;
            }
            f = f.clamp(0.0, (n - 1) as f64);
            if n == 1 {
                base[a] = 0;
                frac[a] = 0.0;
                continue;
            }
            let k = (f.floor() as usize).min(n - 2);
            base[a] = k;
            frac[a] = f - k as f64;
        }
        let mut out = Vec::with_capacity(1 << d);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for a in 0..d {
                let up = (corner >> a) & 1 == 1;
                let fa = frac[a];
                if up {
                    if self.shape[a] == 1 {
                        w = 0.0;
                        break;
                    }
                    w *= fa;
                    idx += (base[a] + 1) * self.strides[a];
                } else {
                    w *= 1.0 - fa;
                    idx += base[a] * self.strides[a];
                }
            }
            if w > 0.0 {
                out.push((idx, w));
            }
        }
        out
    }

    /// Multilinear interpolation of nodal values at `x`.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        self.stencil(x).into_iter().map(|(i, w)| w * values[i]).sum()
    }

    /// Cloud-in-cell deposition of `mass` at `x` into `acc` (mass per node).
    pub fn deposit(&self, acc: &mut [f64], x: &[f64], mass: f64) {
        for (i, w) in self.stencil(x) {
            acc[i] += w * mass;
        }
    }
}

/// Undirected edge of a graph-backend space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub length: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    dist: Array2<f64>,
    edges: Vec<Edge>,
    /// Per vertex: (neighbour, edge index).
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn adjacency(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn dist_matrix(&self) -> &Array2<f64> {
        &self.dist
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Grid(Grid),
    Graph(Graph),
}

/// Finite metric measure space `(X, d, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMeasureSpace {
    backend: Backend,
    weights: Vec<f64>,
    base_point: usize,
}

/// One violated invariant found by [`validate_metric`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonzeroDiagonal { i: usize, value: f64 },
    Asymmetry { i: usize, j: usize, dij: f64, dji: f64 },
    NegativeDistance { i: usize, j: usize, value: f64 },
    NonFiniteDistance { i: usize, j: usize },
    Triangle { i: usize, j: usize, k: usize, excess: f64 },
    NonpositiveWeight { i: usize, value: f64 },
    InvalidEdge { edge: usize },
}

impl MetricMeasureSpace {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn backend_name(&self) -> &'static str {
        match self.backend {
            Backend::Grid(_) => "grid",
            Backend::Graph(_) => "graph",
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Index of the point nearest the coordinate origin (grid) or 0 (graph).
    pub fn base_point(&self) -> usize {
        self.base_point
    }

    pub fn grid(&self) -> Option<&Grid> {
        match &self.backend {
            Backend::Grid(g) => Some(g),
            Backend::Graph(_) => None,
        }
    }

    pub fn graph(&self) -> Option<&Graph> {
        match &self.backend {
            Backend::Graph(g) => Some(g),
            Backend::Grid(_) => None,
        }
    }

    /// Grid accessor for operations that only make sense on a lattice.
    pub fn require_grid(&self, op: &'static str) -> Result<&Grid> {
        self.grid().ok_or(Error::UnsupportedBackend { op, backend: "graph" })
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        match &self.backend {
            Backend::Grid(g) => euclid(g.coords.row(i).as_slice().unwrap(), g.coords.row(j).as_slice().unwrap()),
            Backend::Graph(g) => g.dist[[i, j]],
        }
    }

    /// Builds a graph-backend space from an explicit distance matrix. When
    /// `edges` is `None`, every pair at positive finite distance is an edge
    /// with unit weight.
    pub fn from_graph(dist: Array2<f64>, weights: Vec<f64>, edges: Option<Vec<Edge>>) -> Result<Self> {
        let n = weights.len();
        if dist.nrows() != n || dist.ncols() != n {
            return arg(format!(
                "distance matrix is {}x{} but {} weights were given",
                dist.nrows(),
                dist.ncols(),
                n
            ));
        }
        let edges = match edges {
            Some(e) => e,
            None => {
                let mut e = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        let d = dist[[i, j]];
                        if d.is_finite() && d > 0.0 {
                            e.push(Edge { i, j, length: d, weight: 1.0 });
                        }
                    }
                }
                e
            }
        };
        let mut adjacency = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            if e.i >= n || e.j >= n || e.i == e.j || !(e.length > 0.0) || !(e.weight > 0.0) {
                return arg(format!("edge {k} ({}, {}) is malformed", e.i, e.j));
            }
            adjacency[e.i].push((e.j, k));
            adjacency[e.j].push((e.i, k));
        }
        Ok(Self {
            backend: Backend::Graph(Graph { dist, edges, adjacency }),
            weights,
            base_point: 0,
        })
    }

    /// Builds a graph-backend space whose distance is the shortest-path
    /// metric of an edge-length graph (Floyd-Warshall).
    pub fn from_edges(n: usize, edges: Vec<Edge>, weights: Vec<f64>) -> Result<Self> {
        let mut dist = Array2::from_elem((n, n), f64::INFINITY);
        for i in 0..n {
            dist[[i, i]] = 0.0;
        }
        for e in &edges {
            if e.i >= n || e.j >= n {
                return arg(format!("edge ({}, {}) out of range for {n} vertices", e.i, e.j));
            }
            let d = dist[[e.i, e.j]].min(e.length);
            dist[[e.i, e.j]] = d;
            dist[[e.j, e.i]] = d;
        }
        for k in 0..n {
            for i in 0..n {
                let dik = dist[[i, k]];
                if !dik.is_finite() {
                    continue;
                }
                for j in 0..n {
                    let via = dik + dist[[k, j]];
                    if via < dist[[i, j]] {
                        dist[[i, j]] = via;
                    }
                }
            }
        }
        if dist.iter().any(|d| !d.is_finite()) {
            return arg("edge graph is disconnected");
        }
        Self::from_graph(dist, weights, Some(edges))
    }

    /// Position of point `i` (grid backend only).
    pub fn point(&self, i: usize) -> Option<Vec<f64>> {
        self.grid().map(|g| g.point(i))
    }
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Lattice with spacing `h` on the box `bounds`, capped at [`DEFAULT_POINT_CAP`].
pub fn build_grid(bounds: &[(f64, f64)], h: f64) -> Result<MetricMeasureSpace> {
    build_grid_capped(bounds, h, DEFAULT_POINT_CAP)
}

pub fn build_grid_capped(bounds: &[(f64, f64)], h: f64, cap: usize) -> Result<MetricMeasureSpace> {
    if !(h > 0.0) || !h.is_finite() {
        return arg(format!("grid spacing must be positive, got {h}"));
    }
    if bounds.is_empty() {
        return arg("grid needs at least one axis");
    }
    let mut shape = Vec::with_capacity(bounds.len());
    let mut upper = Vec::with_capacity(bounds.len());
    let mut n: usize = 1;
    for (a, &(lo, hi)) in bounds.iter().enumerate() {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return arg(format!("axis {a} interval [{lo}, {hi}] is degenerate"));
        }
        let cells = ((hi - lo) / h + 1e-9).floor();
        if cells > cap as f64 {
            return Err(Error::Size { n: cells as usize, cap });
        }
        let k = cells as usize + 1;
        n = n.checked_mul(k).filter(|&n| n <= cap).ok_or(Error::Size { n: usize::MAX, cap })?;
        shape.push(k);
        upper.push(lo + (k - 1) as f64 * h);
    }
    let d = bounds.len();
    let mut strides = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let mut coords = Array2::zeros((n, d));
    for i in 0..n {
        let mut r = i;
        for a in 0..d {
            let k = r / strides[a];
            r %= strides[a];
            coords[[i, a]] = lower[a] + k as f64 * h;
        }
    }
    let weights = vec![h.powi(d as i32); n];
    let base_point = (0..n)
        .min_by(|&i, &j| {
            let ni: f64 = coords.row(i).iter().map(|x| x * x).sum();
            let nj: f64 = coords.row(j).iter().map(|x| x * x).sum();
            ni.total_cmp(&nj)
        })
        .unwrap_or(0);
    Ok(MetricMeasureSpace {
        backend: Backend::Grid(Grid { lower, upper, h, shape, strides, coords }),
        weights,
        base_point,
    })
}

/// Triangle checks on grids above this size are skipped: grid distances are
/// Euclidean by construction.
const GRID_TRIANGLE_LIMIT: usize = 256;

/// Lists every violated metric-measure invariant. Empty iff the space is valid.
pub fn validate_metric(space: &MetricMeasureSpace) -> Vec<Violation> {
    let n = space.len();
    let mut out = Vec::new();
    for (i, &w) in space.weights.iter().enumerate() {
        if !(w > 0.0) || !w.is_finite() {
            out.push(Violation::NonpositiveWeight { i, value: w });
        }
    }
    let check_triangle = match &space.backend {
        Backend::Grid(_) => n <= GRID_TRIANGLE_LIMIT,
        Backend::Graph(g) => {
            for (k, e) in g.edges.iter().enumerate() {
                if !(e.length > 0.0) || !(e.weight > 0.0) {
                    out.push(Violation::InvalidEdge { edge: k });
                }
            }
            true
        }
    };
    for i in 0..n {
        let dii = space.dist(i, i);
        if dii != 0.0 {
            out.push(Violation::NonzeroDiagonal { i, value: dii });
        }
        for j in i + 1..n {
            let (dij, dji) = (space.dist(i, j), space.dist(j, i));
            if !dij.is_finite() || !dji.is_finite() {
                out.push(Violation::NonFiniteDistance { i, j });
                continue;
            }
            if dij != dji {
                out.push(Violation::Asymmetry { i, j, dij, dji });
            }
            if dij < 0.0 {
                out.push(Violation::NegativeDistance { i, j, value: dij });
            }
        }
    }
    if check_triangle {
        for i in 0..n {
            for k in 0..n {
                let dik = space.dist(i, k);
                for j in 0..n {
                    let excess = space.dist(i, j) - dik - space.dist(k, j);
                    let scale = 1e-12 * (1.0 + space.dist(i, j).abs());
                    if i < j && excess > scale {
                        out.push(Violation::Triangle { i, j, k, excess });
                    }
                }
            }
        }
    }
    out
}

/// Exponential reweighting `m ↦ e^{-m_factor·u} m`; distances are unchanged.
pub fn reweight_exponential(space: &MetricMeasureSpace, u: &ScalarField, m_factor: f64) -> Result<MetricMeasureSpace> {
    if u.len() != space.len() {
        return arg(format!("field has {} values, space has {} points", u.len(), space.len()));
    }
    if !(m_factor >= 0.0) || !m_factor.is_finite() {
        return arg(format!("reweighting factor must be nonnegative, got {m_factor}"));
    }
    let mut weights = Vec::with_capacity(space.len());
    for (i, (&w, &ui)) in space.weights.iter().zip(u.values()).enumerate() {
        if !ui.is_finite() {
            return Err(Error::Data(format!("potential is not finite at index {i}")));
        }
        let exponent = -m_factor * ui;
        let factor = exponent.exp();
        let w2 = factor * w;
        if !w2.is_finite() || (factor == 0.0 && exponent.is_finite() && w > 0.0) {
            return Err(Error::Range { index: i, exponent });
        }
        weights.push(w2);
    }
    Ok(MetricMeasureSpace { backend: space.backend.clone(), weights, base_point: space.base_point })
}

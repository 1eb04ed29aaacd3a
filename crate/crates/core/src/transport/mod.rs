//! Quadratic optimal transport between discrete measures.
//!
//! Exact solves use a transportation network simplex on the two supports with
//! cost `c(x, y) = d²(x, y)/2`, so the dual variables are Kantorovich
//! potentials in the normalization `φ(x) + φ^c(y) ≤ d²(x, y)/2`. Potentials
//! are extended from the supports to the whole space by c-transforms.

mod simplex;
mod sinkhorn;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::weak_gradient_norm;
use crate::error::{arg, Error, Result};
use crate::field::{Density, ScalarField};
use crate::space::{euclid, MetricMeasureSpace};

/// Default cap on support points for the exact solver.
pub const DEFAULT_EXACT_CAP: usize = 2000;
/// Marginal balance tolerance.
pub const BALANCE_TOL: f64 = 1e-9;
/// Duality gap tolerance for exact solves (relative to `max(1, W₂²)`).
pub const GAP_TOL: f64 = 1e-7;
/// Plan arcs carrying less mass than this are rounding residue and do not
/// constrain the centred potentials.
pub const PLAN_FLOW_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    ExactLp,
    Entropic { epsilon: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::ExactLp => "exact_lp",
            Method::Entropic { .. } => "entropic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportOptions {
    pub exact_cap: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iters: usize,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self { exact_cap: DEFAULT_EXACT_CAP, sinkhorn_tol: 1e-9, sinkhorn_max_iters: 200_000 }
    }
}

/// One nonzero entry of a transport plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub from: usize,
    pub to: usize,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct TransportSolution {
    /// Nonzero plan entries in point indices of the space.
    pub plan: Vec<PlanEntry>,
    pub w2: f64,
    /// Kantorovich potential on the whole space (gauge `φ[i0] = 0`, `i0`
    /// the first support point of μ).
    pub phi: ScalarField,
    /// `φ^c` on the whole space.
    pub phi_c: ScalarField,
    pub method: Method,
    /// `W₂²/2 − (∫φ dμ + ∫φ^c dν)`; zero up to rounding for exact solves.
    pub gap: f64,
    pub iters: usize,
    /// Entropic solutions report a biased W₂ and are flagged approximate.
    pub approximate: bool,
    /// Final L¹ marginal error of the entropic solver (0 for exact solves).
    pub marginal_error: f64,
    pub mu: Density,
    pub nu: Density,
}

impl TransportSolution {
    /// Dense `n × n` plan.
    pub fn plan_matrix(&self, n: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, n));
        for e in &self.plan {
            out[[e.from, e.to]] += e.mass;
        }
        out
    }
}

/// `φ^c(y) = min_x d²(x, y)/2 − φ(x)` over all points.
pub fn c_transform(space: &MetricMeasureSpace, phi: &ScalarField) -> Result<ScalarField> {
    if phi.len() != space.len() {
        return arg(format!("potential has {} values, space has {} points", phi.len(), space.len()));
    }
    if !phi.is_finite() {
        return Err(Error::Data("potential has non-finite entries".into()));
    }
    let all: Vec<usize> = (0..space.len()).collect();
    Ok(ScalarField::new(restricted_c_transform(space, phi.values(), &all, &all)))
}

/// c-transform of `values` (indexed like `from`) evaluated at `to`.
fn restricted_c_transform(space: &MetricMeasureSpace, values: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    to.par_iter()
        .map(|&y| {
            from.iter()
                .zip(values)
                .map(|(&x, &v)| 0.5 * space.dist(x, y).powi(2) - v)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn support_masses(space: &MetricMeasureSpace, d: &Density) -> (Vec<usize>, Vec<f64>) {
    let support = d.support();
    let masses = support.iter().map(|&i| d.rho()[i] * space.weights()[i]).collect();
    (support, masses)
}

/// Quadratic Wasserstein distance between two densities.
pub fn w2(space: &MetricMeasureSpace, mu: &Density, nu: &Density, method: Method) -> Result<TransportSolution> {
    w2_with(space, mu, nu, method, &TransportOptions::default())
}

pub fn w2_with(space: &MetricMeasureSpace, mu: &Density, nu: &Density, method: Method, opts: &TransportOptions) -> Result<TransportSolution> {
    if mu.len() != space.len() || nu.len() != space.len() {
        return arg("densities do not match the space");
    }
    let (sa, a) = support_masses(space, mu);
    let (sb, b) = support_masses(space, nu);
    let total_a: f64 = a.iter().sum();
    let total_b: f64 = b.iter().sum();
    if (total_a - total_b).abs() > BALANCE_TOL {
        return Err(Error::Balance { mismatch: (total_a - total_b).abs() });
    }
    let cost = Array2::from_shape_fn((sa.len(), sb.len()), |(i, j)| 0.5 * space.dist(sa[i], sb[j]).powi(2));

    let (plan, _phi_s, psi_s, iters, marginal_error) = match method {
        Method::ExactLp => {
            if sa.len() > opts.exact_cap || sb.len() > opts.exact_cap {
                return Err(Error::Size { n: sa.len().max(sb.len()), cap: opts.exact_cap });
            }
            let sol = simplex::solve(&a, &b, &cost, BALANCE_TOL)?;
            let (phi, psi) = simplex::center_potentials(&cost, &sol.arcs, &sol.u, &sol.v, 0, PLAN_FLOW_TOL);
            let plan: Vec<PlanEntry> = sol
                .arcs
                .iter()
                .filter(|a| a.flow > 0.0)
                .map(|a| PlanEntry { from: sa[a.i], to: sb[a.j], mass: a.flow })
                .collect();
            (plan, phi, psi, sol.iters, 0.0)
        }
        Method::Entropic { epsilon } => {
            if !(epsilon > 0.0) {
                return arg(format!("entropic regularization must be positive, got {epsilon}"));
            }
            // Sinkhorn runs on the full quadratic cost d² = 2c
            let full = cost.mapv(|c| 2.0 * c);
            let sol = sinkhorn::solve(&a, &b, &full, epsilon, opts.sinkhorn_tol, opts.sinkhorn_max_iters)?;
            let mut plan = Vec::new();
            for (i, row) in sol.plan.rows().into_iter().enumerate() {
                for (j, &m) in row.iter().enumerate() {
                    if m > 0.0 {
                        plan.push(PlanEntry { from: sa[i], to: sb[j], mass: m });
                    }
                }
            }
            let shift = sol.f[0] / 2.0;
            let phi: Vec<f64> = sol.f.iter().map(|f| f / 2.0 - shift).collect();
            let psi: Vec<f64> = sol.g.iter().map(|g| g / 2.0 + shift).collect();
            (plan, phi, psi, sol.iters, sol.marginal_error)
        }
    };

    let approximate = !matches!(method, Method::ExactLp);
    let w2sq: f64 = plan.iter().map(|e| e.mass * space.dist(e.from, e.to).powi(2)).sum();
    let w2 = w2sq.max(0.0).sqrt();

    // extend to the whole space: φ = (ψ restricted to supp ν)^c, then φ^c
    let all: Vec<usize> = (0..space.len()).collect();
    let phi = ScalarField::new(restricted_c_transform(space, &psi_s, &sb, &all));
    let phi_c = c_transform(space, &phi)?;
    let dual = phi.integrate(&mu.masses(space)) + phi_c.integrate(&nu.masses(space));
    let gap = 0.5 * w2sq - dual;
    if !approximate && gap.abs() > GAP_TOL * w2sq.max(1.0) {
        return Err(Error::Data(format!("duality gap {gap:e} exceeds tolerance")));
    }
    Ok(TransportSolution { plan, w2, phi, phi_c, method, gap, iters, approximate, marginal_error, mu: mu.clone(), nu: nu.clone() })
}

/// Displacement interpolation `μ_t` on a grid: each plan atom moves to
/// `(1−t)x + ty` and is deposited by multilinear splatting.
pub fn geodesic_interpolate(space: &MetricMeasureSpace, solution: &TransportSolution, t: f64) -> Result<Density> {
    let g = space.require_grid("geodesic_interpolate")?;
    if !(0.0..=1.0).contains(&t) {
        return arg(format!("interpolation time must lie in [0, 1], got {t}"));
    }
    if t == 0.0 {
        return Ok(solution.mu.clone());
    }
    if t == 1.0 {
        return Ok(solution.nu.clone());
    }
    let mut acc = vec![0.0; space.len()];
    let mut x = vec![0.0; g.dim()];
    for e in &solution.plan {
        let (p, q) = (g.coords().row(e.from), g.coords().row(e.to));
        for a in 0..g.dim() {
            x[a] = (1.0 - t) * p[a] + t * q[a];
        }
        g.deposit(&mut acc, &x, e.mass);
    }
    Density::from_masses(space, &acc)
}

/// Relative defect `|W₂² − ∫|Dφ|² dμ| / W₂²` of the metric Brenier identity.
pub fn check_metric_brenier(space: &MetricMeasureSpace, solution: &TransportSolution, mu: &Density) -> Result<f64> {
    let slope = weak_gradient_norm(space, &solution.phi)?;
    let energy: f64 = slope.values().iter().map(|s| s * s).zip(mu.masses(space)).map(|(s, m)| s * m).sum();
    let w2sq = solution.w2 * solution.w2;
    Ok((w2sq - energy).abs() / w2sq.max(f64::EPSILON))
}

/// Exact transport between two weighted point clouds in ℝ^d.
#[derive(Debug, Clone)]
pub struct CloudTransport {
    pub w2: f64,
    pub plan: Vec<PlanEntry>,
}

/// Exact quadratic transport between weighted point clouds.
pub fn w2_clouds(a_pts: &[Vec<f64>], a_mass: &[f64], b_pts: &[Vec<f64>], b_mass: &[f64]) -> Result<CloudTransport> {
    if a_pts.len() != a_mass.len() || b_pts.len() != b_mass.len() {
        return arg("point and mass counts differ");
    }
    let (ia, a): (Vec<usize>, Vec<f64>) = a_mass.iter().enumerate().filter(|(_, &m)| m > 0.0).map(|(i, &m)| (i, m)).unzip();
    let (ib, b): (Vec<usize>, Vec<f64>) = b_mass.iter().enumerate().filter(|(_, &m)| m > 0.0).map(|(i, &m)| (i, m)).unzip();
    let cost = Array2::from_shape_fn((ia.len(), ib.len()), |(i, j)| 0.5 * euclid(&a_pts[ia[i]], &b_pts[ib[j]]).powi(2));
    let sol = simplex::solve(&a, &b, &cost, BALANCE_TOL)?;
    let plan: Vec<PlanEntry> = sol
        .arcs
        .iter()
        .filter(|a| a.flow > 0.0)
        .map(|a| PlanEntry { from: ia[a.i], to: ib[a.j], mass: a.flow })
        .collect();
    Ok(CloudTransport { w2: (2.0 * sol.cost).max(0.0).sqrt(), plan })
}

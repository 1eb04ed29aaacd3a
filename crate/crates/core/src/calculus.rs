//! First- and second-order calculus on discretized spaces.
//!
//! Grid operators use central differences in the interior and second-order
//! one-sided differences on the boundary faces, so gradients, Laplacians and
//! Hessians are exact on quadratic polynomials at every node. Graph
//! operators follow the usual weighted-graph conventions; only first-order
//! quantities and the graph Laplacian are defined there.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{arg, Error, Result};
use crate::field::{ScalarField, VectorField};
use crate::space::{Backend, Grid, MetricMeasureSpace};

/// Per-point symmetric `d × d` Hessian matrices (grid backend).
#[derive(Debug, Clone, PartialEq)]
pub struct HessianField {
    matrices: Vec<DMatrix<f64>>,
}

impl HessianField {
    pub fn at(&self, i: usize) -> &DMatrix<f64> {
        &self.matrices[i]
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn trace(&self, i: usize) -> f64 {
        self.matrices[i].trace()
    }

    /// Hilbert-Schmidt norm of the Hessian at `i`.
    pub fn hs_norm(&self, i: usize) -> f64 {
        self.matrices[i].norm()
    }
}

/// Worst point of an infinitesimal monotonicity certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct InfinitesimalMargin {
    /// `min_x λ_min(∇ˢb(x)) − K` over interior points.
    pub worst_margin: f64,
    pub witness: usize,
    pub witness_point: Vec<f64>,
}

/// Partial derivative along `axis` at node `i`.
pub(crate) fn partial(g: &Grid, f: &[f64], i: usize, axis: usize) -> f64 {
    let h = g.spacing();
    match (g.shift(i, axis, -1), g.shift(i, axis, 1)) {
        (Some(m), Some(p)) => (f[p] - f[m]) / (2.0 * h),
        (None, Some(p)) => match g.shift(i, axis, 2) {
            Some(pp) => (-3.0 * f[i] + 4.0 * f[p] - f[pp]) / (2.0 * h),
            None => (f[p] - f[i]) / h,
        },
        (Some(m), None) => match g.shift(i, axis, -2) {
            Some(mm) => (3.0 * f[i] - 4.0 * f[m] + f[mm]) / (2.0 * h),
            None => (f[i] - f[m]) / h,
        },
        (None, None) => 0.0,
    }
}

/// Second difference along `axis`; shifted one cell inward on the boundary.
fn second(g: &Grid, f: &[f64], i: usize, axis: usize) -> f64 {
    let h2 = g.spacing() * g.spacing();
    match (g.shift(i, axis, -1), g.shift(i, axis, 1)) {
        (Some(m), Some(p)) => (f[p] - 2.0 * f[i] + f[m]) / h2,
        (None, Some(p)) => g.shift(i, axis, 2).map_or(0.0, |pp| (f[i] - 2.0 * f[p] + f[pp]) / h2),
        (Some(m), None) => g.shift(i, axis, -2).map_or(0.0, |mm| (f[i] - 2.0 * f[m] + f[mm]) / h2),
        (None, None) => 0.0,
    }
}

fn check_len(space: &MetricMeasureSpace, f: &ScalarField) -> Result<()> {
    if f.len() != space.len() {
        return arg(format!("field has {} values, space has {} points", f.len(), space.len()));
    }
    if !f.is_finite() {
        return Err(Error::Data("scalar field has non-finite entries".into()));
    }
    Ok(())
}

fn normalized_edge_weights(space: &MetricMeasureSpace, i: usize) -> Vec<(usize, usize, f64)> {
    let g = space.graph().expect("graph backend");
    let adj = g.adjacency(i);
    let total: f64 = adj.iter().map(|&(_, e)| g.edges()[e].weight).sum();
    adj.iter().map(|&(j, e)| (j, e, g.edges()[e].weight / total)).collect()
}

pub fn gradient(space: &MetricMeasureSpace, f: &ScalarField) -> Result<VectorField> {
    check_len(space, f)?;
    let v = f.values();
    Ok(match space.backend() {
        Backend::Grid(g) => {
            let d = g.dim();
            let mut out = Array2::zeros((g.len(), d));
            for i in 0..g.len() {
                for a in 0..d {
                    out[[i, a]] = partial(g, v, i, a);
                }
            }
            VectorField::Grid(out)
        }
        Backend::Graph(g) => VectorField::Graph(g.edges().iter().map(|e| (v[e.j] - v[e.i]) / e.length).collect()),
    })
}

/// Pointwise weak gradient norm `|Df|`.
pub fn weak_gradient_norm(space: &MetricMeasureSpace, f: &ScalarField) -> Result<ScalarField> {
    check_len(space, f)?;
    let v = f.values();
    Ok(match space.backend() {
        Backend::Grid(g) => ScalarField::new(
            (0..g.len())
                .map(|i| (0..g.dim()).map(|a| partial(g, v, i, a).powi(2)).sum::<f64>().sqrt())
                .collect(),
        ),
        Backend::Graph(g) => ScalarField::new(
            (0..space.len())
                .map(|i| {
                    normalized_edge_weights(space, i)
                        .into_iter()
                        .map(|(j, e, w)| w * ((v[j] - v[i]) / g.edges()[e].length).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect(),
        ),
    })
}

/// Pointwise pairing `⟨b, c⟩`. On graphs each edge product `w_e b_e c_e` is
/// split evenly between its endpoints and divided by the point weight, so that
/// `Σ m_i ⟨b, ∇g⟩_i = −Σ m_i (div b)_i g_i`.
pub fn pairing(space: &MetricMeasureSpace, b: &VectorField, c: &VectorField) -> Result<ScalarField> {
    b.check(space)?;
    c.check(space)?;
    Ok(match (space.backend(), b, c) {
        (Backend::Grid(_), VectorField::Grid(bv), VectorField::Grid(cv)) => {
            ScalarField::new(bv.rows().into_iter().zip(cv.rows()).map(|(x, y)| x.dot(&y)).collect())
        }
        (Backend::Graph(g), VectorField::Graph(bv), VectorField::Graph(cv)) => {
            let mut acc = vec![0.0; space.len()];
            for (e, edge) in g.edges().iter().enumerate() {
                let half = 0.5 * edge.weight * bv[e] * cv[e];
                acc[edge.i] += half;
                acc[edge.j] += half;
            }
            ScalarField::new(acc.iter().zip(space.weights()).map(|(a, m)| a / m).collect())
        }
        _ => unreachable!("checked above"),
    })
}

pub fn divergence(space: &MetricMeasureSpace, b: &VectorField) -> Result<ScalarField> {
    b.check(space)?;
    Ok(match (space.backend(), b) {
        (Backend::Grid(g), VectorField::Grid(bv)) => {
            let d = g.dim();
            let cols: Vec<Vec<f64>> = (0..d).map(|a| bv.column(a).to_vec()).collect();
            ScalarField::new((0..g.len()).map(|i| (0..d).map(|a| partial(g, &cols[a], i, a)).sum()).collect())
        }
        (Backend::Graph(g), VectorField::Graph(bv)) => ScalarField::new(
            (0..space.len())
                .map(|i| {
                    let s: f64 = g
                        .adjacency(i)
                        .iter()
                        .map(|&(_, e)| {
                            let edge = g.edges()[e];
                            let out = if edge.i == i { bv[e] } else { -bv[e] };
                            edge.weight * out / edge.length
                        })
                        .sum();
                    s / space.weights()[i]
                })
                .collect(),
        ),
        _ => unreachable!("checked above"),
    })
}

pub fn laplacian(space: &MetricMeasureSpace, f: &ScalarField) -> Result<ScalarField> {
    check_len(space, f)?;
    let v = f.values();
    Ok(match space.backend() {
        Backend::Grid(g) => ScalarField::new((0..g.len()).map(|i| (0..g.dim()).map(|a| second(g, v, i, a)).sum()).collect()),
        Backend::Graph(g) => ScalarField::new(
            (0..space.len())
                .map(|i| {
                    let s: f64 = g
                        .adjacency(i)
                        .iter()
                        .map(|&(j, e)| {
                            let edge = g.edges()[e];
                            edge.weight * (v[j] - v[i]) / (edge.length * edge.length)
                        })
                        .sum();
                    s / space.weights()[i]
                })
                .collect(),
        ),
    })
}

pub fn hessian(space: &MetricMeasureSpace, f: &ScalarField) -> Result<HessianField> {
    let g = space.require_grid("hessian")?;
    check_len(space, f)?;
    let v = f.values();
    let d = g.dim();
    let grads: Vec<Vec<f64>> = (0..d).map(|a| (0..g.len()).map(|i| partial(g, v, i, a)).collect()).collect();
    let matrices = (0..g.len())
        .map(|i| {
            let mut m = DMatrix::zeros(d, d);
            for a in 0..d {
                m[(a, a)] = second(g, v, i, a);
                for c in a + 1..d {
                    let x = 0.5 * (partial(g, &grads[a], i, c) + partial(g, &grads[c], i, a));
                    m[(a, c)] = x;
                    m[(c, a)] = x;
                }
            }
            m
        })
        .collect();
    Ok(HessianField { matrices })
}

/// Bochner margin `Γ₂(f;φ) − k∫|Df|²φ − (1/N)∫(Δf)²φ` evaluated through the
/// integrated form `½∫|Df|²Δφ − ∫⟨∇f,∇Δf⟩φ`. Pass `f64::INFINITY` for `n`
/// to drop the dimension term.
pub fn gamma2_check(space: &MetricMeasureSpace, f: &ScalarField, phi: &ScalarField, k: f64, n: f64) -> Result<f64> {
    let g = space.require_grid("gamma2_check")?;
    check_len(space, f)?;
    check_len(space, phi)?;
    if let Some(i) = phi.values().iter().position(|&p| p < 0.0) {
        return arg(format!("test function is negative at index {i}"));
    }
    // the compact Laplacian stencil of φ must stay off the boundary rows
    if let Some(i) = (0..g.len()).find(|&i| phi[i] != 0.0 && !g.is_interior_by(i, 2)) {
        return arg(format!("test function must vanish within two cells of the boundary (index {i})"));
    }
    if !(n > 0.0) {
        return arg(format!("dimension bound must be positive, got {n}"));
    }
    let w = space.weights();
    let grad_sq: Vec<f64> = weak_gradient_norm(space, f)?.values().iter().map(|x| x * x).collect();
    let lap_f = laplacian(space, f)?;
    let lap_phi = laplacian(space, phi)?;
    let inv_n = if n.is_infinite() { 0.0 } else { 1.0 / n };
    let mut margin = 0.0;
    for i in g.interior_indices() {
        margin += 0.5 * grad_sq[i] * lap_phi[i] * w[i];
        if phi[i] == 0.0 {
            continue;
        }
        let inner: f64 = (0..g.dim())
            .map(|a| partial(g, f.values(), i, a) * partial(g, lap_f.values(), i, a))
            .sum();
        margin -= inner * phi[i] * w[i];
        margin -= (k * grad_sq[i] + inv_n * lap_f[i] * lap_f[i]) * phi[i] * w[i];
    }
    Ok(margin)
}

/// Smallest eigenvalue of the symmetrized Jacobian of `b`, minus `k`, over
/// interior points.
pub fn infinitesimal_check(space: &MetricMeasureSpace, b: &VectorField, k: f64) -> Result<InfinitesimalMargin> {
    let g = space.require_grid("infinitesimal_check")?;
    b.check(space)?;
    let bv = b.grid_values().expect("grid field");
    let d = g.dim();
    let cols: Vec<Vec<f64>> = (0..d).map(|a| bv.column(a).to_vec()).collect();
    let interior = g.interior_indices();
    if interior.is_empty() {
        return arg("grid has no interior points");
    }
    let margins: Vec<(usize, f64)> = interior
        .par_iter()
        .map(|&i| {
            let mut jac = DMatrix::zeros(d, d);
            for a in 0..d {
                for c in 0..d {
                    jac[(a, c)] = partial(g, &cols[a], i, c);
                }
            }
            let sym = (&jac + jac.transpose()) * 0.5;
            let lmin = if d == 1 {
                sym[(0, 0)]
            } else {
                SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
            };
            (i, lmin - k)
        })
        .collect();
    let (witness, worst_margin) = margins
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("nonempty interior");
    Ok(InfinitesimalMargin { worst_margin, witness, witness_point: g.point(witness) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_grid, MetricMeasureSpace};
    use approx::assert_abs_diff_eq;

    fn line(lo: f64, hi: f64, h: f64) -> MetricMeasureSpace {
        build_grid(&[(lo, hi)], h).unwrap()
    }

    fn square(h: f64) -> MetricMeasureSpace {
        build_grid(&[(-1.0, 1.0), (-1.0, 1.0)], h).unwrap()
    }

    fn interior(space: &MetricMeasureSpace) -> Vec<usize> {
        space.grid().unwrap().interior_indices()
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let s = square(0.25);
        let b = gradient(&s, &ScalarField::constant(s.len(), 3.5)).unwrap();
        assert!(b.grid_values().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_linear_and_quadratic() {
        let s = line(0.0, 2.0, 0.1);
        let f = ScalarField::from_fn(&s, |x| x[0]).unwrap();
        let b = gradient(&s, &f).unwrap();
        for i in interior(&s) {
            assert_abs_diff_eq!(b.grid_values().unwrap()[[i, 0]], 1.0, epsilon = 1e-12);
        }
        let q = ScalarField::from_fn(&s, |x| x[0] * x[0]).unwrap();
        let bq = gradient(&s, &q).unwrap();
        // node 10 sits at x = 1: ((1.1)² − (0.9)²) / 0.2 = 2
        assert_abs_diff_eq!(s.point(10).unwrap()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bq.grid_values().unwrap()[[10, 0]], (1.1f64.powi(2) - 0.9f64.powi(2)) / 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(bq.grid_values().unwrap()[[10, 0]], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn weak_gradient_norm_examples() {
        let s = line(-1.0, 1.0, 0.1);
        let f = ScalarField::from_fn(&s, |x| x[0]).unwrap();
        let n = weak_gradient_norm(&s, &f).unwrap();
        for i in interior(&s) {
            assert_abs_diff_eq!(n[i], 1.0, epsilon = 1e-12);
        }
        let sq = square(0.25);
        let f2 = ScalarField::from_fn(&sq, |x| x[0] + x[1]).unwrap();
        let n2 = weak_gradient_norm(&sq, &f2).unwrap();
        for i in interior(&sq) {
            assert_abs_diff_eq!(n2[i], 2f64.sqrt(), epsilon = 1e-12);
        }
        // central differences flatten the kink of |x| at the origin
        let a = ScalarField::from_fn(&s, |x| x[0].abs()).unwrap();
        let na = weak_gradient_norm(&s, &a).unwrap();
        assert_abs_diff_eq!(na[10], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn divergence_examples() {
        let s = line(-1.0, 1.0, 0.1);
        let c = VectorField::from_fn(&s, |_| vec![2.0]).unwrap();
        let x = VectorField::from_fn(&s, |x| vec![x[0]]).unwrap();
        let grad_q = gradient(&s, &ScalarField::from_fn(&s, |x| x[0] * x[0] / 2.0).unwrap()).unwrap();
        let dc = divergence(&s, &c).unwrap();
        let dx = divergence(&s, &x).unwrap();
        let dq = divergence(&s, &grad_q).unwrap();
        for i in interior(&s) {
            assert_abs_diff_eq!(dc[i], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(dx[i], 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(dq[i], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn laplacian_examples() {
        let s = line(-1.0, 1.0, 0.1);
        let lin = laplacian(&s, &ScalarField::from_fn(&s, |x| 3.0 * x[0] - 1.0).unwrap()).unwrap();
        let q = ScalarField::from_fn(&s, |x| x[0] * x[0] / 2.0).unwrap();
        let lq = laplacian(&s, &q).unwrap();
        let dg = divergence(&s, &gradient(&s, &q).unwrap()).unwrap();
        for i in interior(&s) {
            assert_abs_diff_eq!(lin[i], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(lq[i], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(lq[i], dg[i], epsilon = 1e-10);
        }
        let sq = square(0.25);
        let l2 = laplacian(&sq, &ScalarField::from_fn(&sq, |x| (x[0] * x[0] + x[1] * x[1]) / 2.0).unwrap()).unwrap();
        for i in interior(&sq) {
            assert_abs_diff_eq!(l2[i], 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn hessian_examples() {
        let s = line(-1.0, 1.0, 0.1);
        let zero = hessian(&s, &ScalarField::from_fn(&s, |x| 2.0 * x[0] + 1.0).unwrap()).unwrap();
        let k = 1.7;
        let hk = hessian(&s, &ScalarField::from_fn(&s, |x| k * x[0] * x[0] / 2.0).unwrap()).unwrap();
        for i in 0..s.len() {
            assert_abs_diff_eq!(zero.at(i)[(0, 0)], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(hk.at(i)[(0, 0)], k, epsilon = 1e-10);
        }
        let sq = square(0.25);
        let hxy = hessian(&sq, &ScalarField::from_fn(&sq, |x| x[0] * x[1]).unwrap()).unwrap();
        for i in interior(&sq) {
            let m = hxy.at(i);
            assert_abs_diff_eq!(m[(0, 0)], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m[(1, 1)], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m[(0, 1)], 1.0, epsilon = 1e-12);
            assert_eq!(m[(0, 1)], m[(1, 0)]);
        }
    }

    #[test]
    fn hessian_rejects_graphs() {
        let dist = ndarray::array![[0.0, 1.0], [1.0, 0.0]];
        let s = MetricMeasureSpace::from_graph(dist, vec![1.0; 2], None).unwrap();
        let f = ScalarField::new(vec![0.0, 1.0]);
        assert!(matches!(hessian(&s, &f), Err(Error::UnsupportedBackend { .. })));
        let b = VectorField::Graph(vec![1.0]);
        assert!(matches!(infinitesimal_check(&s, &b, 0.0), Err(Error::UnsupportedBackend { .. })));
    }

    fn bump_phi(s: &MetricMeasureSpace, c: f64, r: f64) -> ScalarField {
        ScalarField::from_fn(s, |x| {
            let t = ((x[0] - c) / r).powi(2);
            if t < 1.0 {
                (1.0 - t).powi(3)
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn gamma2_examples() {
        let s = line(-1.0, 1.0, 0.02);
        let phi = bump_phi(&s, 0.1, 0.5);
        let int_phi = phi.integrate(s.weights());
        let lin = ScalarField::from_fn(&s, |x| x[0]).unwrap();
        assert_abs_diff_eq!(gamma2_check(&s, &lin, &phi, 0.0, f64::INFINITY).unwrap(), 0.0, epsilon = 1e-8);
        let q = ScalarField::from_fn(&s, |x| x[0] * x[0] / 2.0).unwrap();
        assert_abs_diff_eq!(gamma2_check(&s, &q, &phi, 0.0, 1.0).unwrap(), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(gamma2_check(&s, &q, &phi, 0.0, f64::INFINITY).unwrap(), int_phi, epsilon = 1e-6);
        assert!(int_phi > 0.0);
    }

    #[test]
    fn gamma2_rejects_negative_phi() {
        let s = line(-1.0, 1.0, 0.1);
        let mut v = vec![0.0; s.len()];
        v[10] = -1.0;
        let f = ScalarField::from_fn(&s, |x| x[0]).unwrap();
        assert!(matches!(gamma2_check(&s, &f, &ScalarField::new(v), 0.0, 1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn infinitesimal_examples() {
        let s = square(0.1);
        let id = gradient(&s, &ScalarField::from_fn(&s, |x| (x[0] * x[0] + x[1] * x[1]) / 2.0).unwrap()).unwrap();
        let r = infinitesimal_check(&s, &id, 1.0).unwrap();
        assert_abs_diff_eq!(r.worst_margin, 0.0, epsilon = 1e-9);
        let saddle = gradient(&s, &ScalarField::from_fn(&s, |x| (x[0] * x[0] - x[1] * x[1]) / 2.0).unwrap()).unwrap();
        assert_abs_diff_eq!(infinitesimal_check(&s, &saddle, -1.0).unwrap().worst_margin, 0.0, epsilon = 1e-9);
        let c = VectorField::from_fn(&s, |_| vec![0.3, -2.0]).unwrap();
        assert_abs_diff_eq!(infinitesimal_check(&s, &c, 0.0).unwrap().worst_margin, 0.0, epsilon = 1e-12);
    }

    fn graph_path() -> MetricMeasureSpace {
        use crate::space::Edge;
        let edges = vec![
            Edge { i: 0, j: 1, length: 1.0, weight: 1.0 },
            Edge { i: 1, j: 2, length: 0.5, weight: 2.0 },
            Edge { i: 2, j: 3, length: 2.0, weight: 1.0 },
            Edge { i: 0, j: 3, length: 3.0, weight: 0.5 },
        ];
        MetricMeasureSpace::from_edges(4, edges, vec![1.0, 0.5, 2.0, 1.5]).unwrap()
    }

    #[test]
    fn graph_integration_by_parts_is_exact() {
        let s = graph_path();
        let f = ScalarField::new(vec![0.3, -1.0, 2.0, 0.7]);
        let g = ScalarField::new(vec![1.0, 0.2, -0.4, 3.0]);
        let grad_f = gradient(&s, &f).unwrap();
        let grad_g = gradient(&s, &g).unwrap();
        let div = divergence(&s, &grad_f).unwrap();
        let lhs: f64 = (0..s.len()).map(|i| div[i] * g[i] * s.weights()[i]).sum();
        let graph = s.graph().unwrap();
        let rhs: f64 = graph
            .edges()
            .iter()
            .enumerate()
            .map(|(e, edge)| edge.weight * grad_f.edge_value(e, true).unwrap() * grad_g.edge_value(e, true).unwrap())
            .sum();
        assert_abs_diff_eq!(lhs, -rhs, epsilon = 1e-12);
        let lap = laplacian(&s, &f).unwrap();
        for i in 0..s.len() {
            assert_abs_diff_eq!(lap[i], div[i], epsilon = 1e-12);
        }
        let paired = pairing(&s, &grad_f, &grad_g).unwrap();
        assert_abs_diff_eq!(paired.integrate(s.weights()), rhs, epsilon = 1e-12);
    }

    #[test]
    fn grid_pairing_is_dot_product() {
        let s = square(0.5);
        let b = VectorField::from_fn(&s, |x| vec![x[0], 2.0]).unwrap();
        let c = VectorField::from_fn(&s, |x| vec![3.0, x[1]]).unwrap();
        let p = pairing(&s, &b, &c).unwrap();
        for i in 0..s.len() {
            let x = s.point(i).unwrap();
            assert_abs_diff_eq!(p[i], 3.0 * x[0] + 2.0 * x[1], epsilon = 1e-12);
        }
        assert!(pairing(&s, &b, &VectorField::Graph(vec![])).is_err());
    }

    #[test]
    fn graph_gradient_norm_constant_is_zero() {
        let s = graph_path();
        let n = weak_gradient_norm(&s, &ScalarField::constant(4, 2.0)).unwrap();
        assert!(n.values().iter().all(|&v| v == 0.0));
        let f = ScalarField::new(vec![0.0, 1.0, 0.0, 0.0]);
        let n = weak_gradient_norm(&s, &f).unwrap();
        // vertex 0: neighbours 1 (len 1, w 1) and 3 (len 3, w 0.5) → weights 2/3, 1/3
        assert_abs_diff_eq!(n[0], (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    }
}

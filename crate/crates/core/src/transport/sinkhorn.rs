//! Log-domain Sinkhorn iterations with ε-scaling.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct EntropicSolution {
    pub plan: Array2<f64>,
    /// Dual potentials for the cost matrix passed in.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub marginal_error: f64,
    pub iters: usize,
}

fn log_sum_exp(it: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + it.map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Newton steps are attempted only when the dual has at most this many
/// unknowns (dense factorization).
const NEWTON_MAX_UNKNOWNS: usize = 1200;
/// Plain sweeps per ε stage before Newton steps are tried.
const SWEEPS_BEFORE_NEWTON: usize = 10;

#[allow(clippy::too_many_arguments)]
fn plan_entry(a: &[f64], b: &[f64], cost: &Array2<f64>, f: &[f64], g: &[f64], eps: f64, i: usize, j: usize) -> f64 {
    a[i] * b[j] * ((f[i] + g[j] - cost[[i, j]]) / eps).exp()
}

/// L¹ error of both marginals; infinite on overflow.
fn residual(a: &[f64], b: &[f64], cost: &Array2<f64>, f: &[f64], g: &[f64], eps: f64) -> f64 {
    let (m, n) = cost.dim();
    let mut cols = vec![0.0; n];
    let mut err = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for (j, c) in cols.iter_mut().enumerate() {
            let p = plan_entry(a, b, cost, f, g, eps, i, j);
            row += p;
            *c += p;
        }
        err += (row - a[i]).abs();
    }
    err += cols.iter().zip(b).map(|(c, bj)| (c - bj).abs()).sum::<f64>();
    if err.is_finite() {
        err
    } else {
        f64::INFINITY
    }
}

/// Damped Newton step on the concave dual `Σa f + Σb g − ε Σπ`, with the
/// gauge fixed by `Δg[n−1] = 0`. Returns false when no step reduces the
/// marginal residual.
fn newton_step(a: &[f64], b: &[f64], cost: &Array2<f64>, f: &mut [f64], g: &mut [f64], eps: f64) -> bool {
    let (m, n) = cost.dim();
    let k = m + n - 1;
    let mut hess = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut cols = vec![0.0; n];
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..n {
            let p = plan_entry(a, b, cost, f, g, eps, i, j);
            row += p;
            cols[j] += p;
            if j + 1 < n {
                hess[(i, m + j)] = p;
                hess[(m + j, i)] = p;
            }
        }
        hess[(i, i)] = row;
        rhs[i] = eps * (a[i] - row);
    }
    for j in 0..n - 1 {
        hess[(m + j, m + j)] = cols[j];
        rhs[m + j] = eps * (b[j] - cols[j]);
    }
    let ridge = 1e-14 * hess.diagonal().max();
    for d in 0..k {
        hess[(d, d)] += ridge;
    }
    let Some(chol) = hess.cholesky() else {
        return false;
    };
    let step = chol.solve(&rhs);
    let base = residual(a, b, cost, f, g, eps);
    let (f0, g0) = (f.to_vec(), g.to_vec());
    let mut t = 1.0;
    for _ in 0..30 {
        for i in 0..m {
            f[i] = f0[i] + t * step[i];
        }
        for j in 0..n - 1 {
            g[j] = g0[j] + t * step[m + j];
        }
        if residual(a, b, cost, f, g, eps) < base {
            return true;
        }
        t *= 0.5;
    }
    f.copy_from_slice(&f0);
    g.copy_from_slice(&g0);
    false
}

/// Entropic transport with plan `π_ij = a_i b_j exp((f_i + g_j − c_ij)/ε)`.
/// Stops once the L¹ column-marginal error after a full sweep falls below
/// `tol`. Small problems interleave Newton steps with the sweeps.
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &Array2<f64>, epsilon: f64, tol: f64, max_iters: usize) -> Result<EntropicSolution> {
    let (m, n) = cost.dim();
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let cmax = cost.iter().fold(0.0f64, |s, c| s.max(*c));
    let mut eps = cmax.max(epsilon);
    let newton = m + n - 1 <= NEWTON_MAX_UNKNOWNS;
    let mut iters = 0;
    let mut err;

    loop {
        let final_stage = eps <= epsilon;
        let stage_tol = if final_stage { tol } else { 1e-3 };
        let mut sweeps = 0;
        loop {
            for j in 0..n {
                let lse = log_sum_exp((0..m).map(|i| log_a[i] + (f[i] - cost[[i, j]]) / eps));
                g[j] = -eps * lse;
            }
            for i in 0..m {
                let lse = log_sum_exp((0..n).map(|j| log_b[j] + (g[j] - cost[[i, j]]) / eps));
                f[i] = -eps * lse;
            }
            iters += 1;
            sweeps += 1;
            // after the f-update rows are exact; measure the column error
            err = (0..n)
                .map(|j| {
                    let s: f64 = (0..m).map(|i| plan_entry(a, b, cost, &f, &g, eps, i, j)).sum();
                    (s - b[j]).abs()
                })
                .sum();
            if err < stage_tol {
                break;
            }
            if iters >= max_iters {
                return Err(Error::Convergence { iters, error: err });
            }
            if newton && sweeps >= SWEEPS_BEFORE_NEWTON && newton_step(a, b, cost, &mut f, &mut g, eps) {
                iters += 1;
            }
        }
        if final_stage {
            break;
        }
        eps = (eps * 0.5).max(epsilon);
    }

    let plan = Array2::from_shape_fn((m, n), |(i, j)| plan_entry(a, b, cost, &f, &g, eps, i, j));
    Ok(EntropicSolution { plan, f, g, marginal_error: err, iters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn marginals_match_and_cost_decreases_with_epsilon() {
        let xs: Vec<f64> = (0..12).map(|k| k as f64 / 11.0).collect();
        let a: Vec<f64> = (0..12).map(|k| (1 + k % 3) as f64).collect();
        let b: Vec<f64> = (0..12).map(|k| (1 + (k * 7) % 5) as f64).collect();
        let sa: f64 = a.iter().sum();
        let sb: f64 = b.iter().sum();
        let a: Vec<f64> = a.iter().map(|x| x / sa).collect();
        let b: Vec<f64> = b.iter().map(|x| x / sb).collect();
        let c = Array2::from_shape_fn((12, 12), |(i, j)| (xs[i] - xs[j]).powi(2));
        let mut last = f64::INFINITY;
        for eps in [1e-1, 1e-2, 1e-3] {
            let sol = solve(&a, &b, &c, eps, 1e-10, 200_000).unwrap();
            for i in 0..12 {
                assert_abs_diff_eq!(sol.plan.row(i).sum(), a[i], epsilon = 1e-9);
                assert_abs_diff_eq!(sol.plan.column(i).sum(), b[i], epsilon = 1e-9);
            }
            let cost: f64 = (&sol.plan * &c).sum();
            assert!(cost <= last + 1e-12);
            last = cost;
        }
    }

    #[test]
    fn iteration_cap_reports_error() {
        let c = ndarray::array![[0.0, 1.0], [1.0, 0.0]];
        let r = solve(&[0.5, 0.5], &[0.2, 0.8], &c, 1e-4, 1e-15, 3);
        assert!(matches!(r, Err(Error::Convergence { .. })));
    }

    #[test]
    fn converges_at_small_epsilon() {
        // one sweep moves the duals by about ε, so plain Sinkhorn needs ~1e5 sweeps here
        let h = 0.02;
        let xs: Vec<f64> = (0..50).map(|k| k as f64 * h).collect();
        let raw_a: Vec<f64> = (0..50).map(|k| 1.0 + ((k * 37) % 11) as f64).collect();
        let raw_b: Vec<f64> = (0..50).map(|k| 1.0 + ((k * 13) % 7) as f64).collect();
        let (sa, sb): (f64, f64) = (raw_a.iter().sum(), raw_b.iter().sum());
        let a: Vec<f64> = raw_a.iter().map(|x| x / sa).collect();
        let b: Vec<f64> = raw_b.iter().map(|x| x / sb).collect();
        let c = Array2::from_shape_fn((50, 50), |(i, j)| (xs[i] - xs[j]).powi(2));
        let sol = solve(&a, &b, &c, 0.01 * h * h, 1e-9, 20_000).unwrap();
        assert!(sol.marginal_error < 1e-9);
        for (row, ai) in sol.plan.rows().into_iter().zip(&a) {
            assert_abs_diff_eq!(row.sum(), *ai, epsilon = 1e-9);
        }
    }
}

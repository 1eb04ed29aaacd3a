//! Network simplex for the balanced transportation problem
//!
//!   min Σ c_ij π_ij  s.t.  Σ_j π_ij = a_i,  Σ_i π_ij = b_j,  π ≥ 0.
//!
//! The basis is a spanning tree over the bipartite node set (rows first,
//! then columns). Dual potentials satisfy `u_i + v_j = c_ij` on tree arcs.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Arc {
    pub i: usize,
    pub j: usize,
    pub flow: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct SimplexSolution {
    /// Basic arcs (a spanning tree; some may carry zero flow).
    pub arcs: Vec<Arc>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub cost: f64,
    pub iters: usize,
}

struct Tree {
    parent_arc: Vec<usize>,
    parent: Vec<usize>,
    depth: Vec<usize>,
}

/// Northwest-corner basis. On sorted one-dimensional supports this is
/// already the monotone (optimal) coupling.
fn northwest_corner(a: &[f64], b: &[f64]) -> Vec<Arc> {
    let (m, n) = (a.len(), b.len());
    let mut ra = a.to_vec();
    let mut rb = b.to_vec();
    let mut arcs = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = ra[i].min(rb[j]).max(0.0);
        arcs.push(Arc { i, j, flow: x });
        ra[i] -= x;
        rb[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (i < m - 1 && ra[i] <= rb[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }
    // rounding leftovers land on the last arc
    let last = arcs.len() - 1;
    arcs[last].flow = (arcs[last].flow + ra[m - 1].max(0.0)).max(0.0);
    arcs
}

fn build_tree(m: usize, n: usize, arcs: &[Arc], cost: &Array2<f64>, u: &mut [f64], v: &mut [f64]) -> Tree {
    let nodes = m + n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (k, a) in arcs.iter().enumerate() {
        adj[a.i].push(k);
        adj[m + a.j].push(k);
    }
    let mut parent_arc = vec![usize::MAX; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut seen = vec![false; nodes];
    let mut stack = vec![0usize];
    seen[0] = true;
    u[0] = 0.0;
    while let Some(node) = stack.pop() {
        for &k in &adj[node] {
            let a = arcs[k];
            let other = if node < m { m + a.j } else { a.i };
            if seen[other] {
                continue;
            }
            seen[other] = true;
            parent[other] = node;
            parent_arc[other] = k;
            depth[other] = depth[node] + 1;
            if other >= m {
                v[a.j] = cost[[a.i, a.j]] - u[a.i];
            } else {
                u[a.i] = cost[[a.i, a.j]] - v[a.j];
            }
            stack.push(other);
        }
    }
    Tree { parent_arc, parent, depth }
}

/// Solves the transportation problem exactly. `a` and `b` must have equal
/// totals up to `balance_tol`.
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &Array2<f64>, balance_tol: f64) -> Result<SimplexSolution> {
    let (m, n) = (a.len(), b.len());
    assert_eq!(cost.dim(), (m, n));
    if m == 0 || n == 0 {
        return Err(Error::Argument("empty marginal".into()));
    }
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    if (sa - sb).abs() > balance_tol {
        return Err(Error::Balance { mismatch: (sa - sb).abs() });
    }
    let b: Vec<f64> = b.iter().map(|x| x * sa / sb).collect();
    let mut arcs = northwest_corner(a, &b);

    let scale = cost.iter().fold(0.0f64, |s, c| s.max(c.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    let block = ((m * n) as f64).sqrt().ceil().max(16.0) as usize;
    let max_iters = 50 * (m + n) * (m + n) + 10_000;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut cursor = 0usize;
    let total = m * n;
    let mut iters = 0;

    loop {
        let tree = build_tree(m, n, &arcs, cost, &mut u, &mut v);

        // block pricing: best candidate within the first block that has one
        let mut best: Option<(usize, usize, f64)> = None;
        let mut scanned = 0;
        while scanned < total {
            let end = (scanned + block).min(total);
            for k in scanned..end {
                let idx = (cursor + k) % total;
                let (i, j) = (idx / n, idx % n);
                let r = cost[[i, j]] - u[i] - v[j];
                if r < -tol && best.is_none_or(|b| r < b.2) {
                    best = Some((i, j, r));
                }
            }
            scanned = end;
            if best.is_some() {
                cursor = (cursor + scanned) % total;
                break;
            }
        }
        let Some((ei, ej, _)) = best else { break };

        iters += 1;
        if iters > max_iters {
            return Err(Error::Convergence { iters, error: f64::NAN });
        }

        // cycle: entering arc, then tree path from column ej back to row ei
        let mut up_q = Vec::new();
        let mut up_p = Vec::new();
        let (mut p, mut q) = (ei, m + ej);
        while tree.depth[q] > tree.depth[p] {
            up_q.push(tree.parent_arc[q]);
            q = tree.parent[q];
        }
        while tree.depth[p] > tree.depth[q] {
            up_p.push(tree.parent_arc[p]);
            p = tree.parent[p];
        }
        while p != q {
            up_q.push(tree.parent_arc[q]);
            q = tree.parent[q];
            up_p.push(tree.parent_arc[p]);
            p = tree.parent[p];
        }
        let path: Vec<usize> = up_q.into_iter().chain(up_p.into_iter().rev()).collect();

        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 && arcs[k].flow < theta {
                theta = arcs[k].flow;
                leave = pos;
            }
        }
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                arcs[k].flow = (arcs[k].flow - theta).max(0.0);
            } else {
                arcs[k].flow += theta;
            }
        }
        arcs[path[leave]] = Arc { i: ei, j: ej, flow: theta };
    }

    let cost_value = arcs.iter().map(|a| a.flow * cost[[a.i, a.j]]).sum();
    Ok(SimplexSolution { arcs, u, v, cost: cost_value, iters })
}

/// Re-centres optimal dual potentials inside the optimal face.
///
/// With the optimal plan fixed, the optimal duals form the solution set of a
/// system of difference constraints: `φ_i + ψ_j ≤ c_ij` everywhere and
/// equality on arcs carrying mass. Pinning `φ[i0] = 0`, the componentwise
/// largest and smallest solutions are shortest-path distances to and from
/// `i0`; their average is again optimal and sits in the middle of the face.
pub(crate) fn center_potentials(
    cost: &Array2<f64>,
    arcs: &[Arc],
    u: &[f64],
    v: &[f64],
    i0: usize,
    flow_tol: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = cost.dim();
    // variables p_i = φ_i (rows), q_j = −ψ_j (columns); Johnson potentials
    // from the simplex duals make every reduced weight nonnegative
    let pot = |node: usize| if node < m { u[node] } else { -v[node - m] };
    let mut plan_out: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut plan_in: Vec<Vec<usize>> = vec![Vec::new(); n];
    for a in arcs.iter().filter(|a| a.flow > flow_tol) {
        plan_out[a.i].push(a.j);
        plan_in[a.j].push(a.i);
    }
    let reduced_col_to_row = |j: usize, i: usize| (cost[[i, j]] - u[i] - v[j]).max(0.0);
    let reduced_row_to_col = |i: usize, j: usize| (u[i] + v[j] - cost[[i, j]]).max(0.0);

    let dijkstra = |reverse: bool| -> Vec<f64> {
        let nodes = m + n;
        let mut dist = vec![f64::INFINITY; nodes];
        let mut done = vec![false; nodes];
        dist[i0] = 0.0;
        for _ in 0..nodes {
            let mut best = usize::MAX;
            let mut bd = f64::INFINITY;
            for (k, &d) in dist.iter().enumerate() {
                if !done[k] && d < bd {
                    bd = d;
                    best = k;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < m {
                let i = best;
                if !reverse {
                    for &j in &plan_out[i] {
                        let nd = bd + reduced_row_to_col(i, j);
                        if nd < dist[m + j] {
                            dist[m + j] = nd;
                        }
                    }
                } else {
                    for j in 0..n {
                        let nd = bd + reduced_col_to_row(j, i);
                        if nd < dist[m + j] {
                            dist[m + j] = nd;
                        }
                    }
                }
            } else {
                let j = best - m;
                if !reverse {
                    for (i, d) in dist.iter_mut().enumerate().take(m) {
                        let nd = bd + reduced_col_to_row(j, i);
                        if nd < *d {
                            *d = nd;
                        }
                    }
                } else {
                    for &i in &plan_in[j] {
                        let nd = bd + reduced_row_to_col(i, j);
                        if nd < dist[i] {
                            dist[i] = nd;
                        }
                    }
                }
            }
        }
        dist
    };

    let fwd = dijkstra(false);
    let bwd = dijkstra(true);
    let p0 = pot(i0);
    let mut phi = vec![0.0; m];
    let mut psi = vec![0.0; n];
    for node in 0..m + n {
        // true distances from/to i0
        let d_from = fwd[node] - p0 + pot(node);
        let d_to = bwd[node] - pot(node) + p0;
        let (hi, lo) = if fwd[node].is_finite() && bwd[node].is_finite() {
            (d_from, -d_to)
        } else {
            (pot(node) - p0, pot(node) - p0)
        };
        let mid = 0.5 * (hi + lo);
        if node < m {
            phi[node] = mid;
        } else {
            psi[node - m] = -mid;
        }
    }
    (phi, psi)
}

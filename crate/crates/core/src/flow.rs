//! Particle (Lagrangian) and finite-volume (Eulerian) solvers for the
//! continuity equation `∂_t μ + ∇·(b μ) = 0`. The velocity is taken as given;
//! callers driving a gradient flow pass `−∇u` themselves.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{arg, Error, Result};
use crate::field::{Density, VectorField};
use crate::space::{Grid, MetricMeasureSpace};

/// Particle masses must sum to one within this tolerance.
pub const PARTICLE_MASS_TOL: f64 = 1e-12;
/// Smoothing passes in [`ParticleEnsemble::kernel_density`].
pub const KDE_PASSES: usize = 2;
/// Admissible Courant number for the upwind scheme.
pub const CFL_LIMIT: f64 = 0.9;

/// Weighted point cloud on a grid domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Array2<f64>,
    masses: Vec<f64>,
    provenance: String,
}

impl ParticleEnsemble {
    pub fn new(positions: Array2<f64>, masses: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if masses.is_empty() || positions.nrows() != masses.len() {
            return arg(format!("{} positions for {} masses", positions.nrows(), masses.len()));
        }
        if let Some(k) = masses.iter().position(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::Data(format!("particle {k} has non-positive mass {}", masses[k])));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > PARTICLE_MASS_TOL {
            return Err(Error::Data(format!("particle masses sum to {total}, expected 1")));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("particle positions are not finite".into()));
        }
        Ok(Self { positions, masses, provenance: provenance.into() })
    }

    /// Equal-mass particles at the given points.
    pub fn from_points(points: &[Vec<f64>], provenance: impl Into<String>) -> Result<Self> {
        let d = points.first().map_or(0, |p| p.len());
        if points.iter().any(|p| p.len() != d) {
            return arg("points have inconsistent dimensions");
        }
        let positions = Array2::from_shape_fn((points.len(), d), |(k, a)| points[k][a]);
        let m = 1.0 / points.len() as f64;
        let mut masses = vec![m; points.len()];
        // absorb rounding so the sum is 1 to the last bit we can control
        if let Some(last) = masses.last_mut() {
            *last = 1.0 - m * (points.len() - 1) as f64;
        }
        Self::new(positions, masses, provenance)
    }

    /// One particle per support node of `density`, carrying that node's mass.
    pub fn from_density(space: &MetricMeasureSpace, density: &Density, provenance: impl Into<String>) -> Result<Self> {
        let g = space.require_grid("ParticleEnsemble::from_density")?;
        let all = density.masses(space);
        let support = density.support();
        let total: f64 = support.iter().map(|&i| all[i]).sum();
        let positions = Array2::from_shape_fn((support.len(), g.dim()), |(k, a)| g.coords()[[support[k], a]]);
        Self::new(positions, support.iter().map(|&i| all[i] / total).collect(), provenance)
    }

    /// Every grid node as a particle weighted by the normalized reference measure.
    pub fn grid_points(space: &MetricMeasureSpace) -> Result<Self> {
        let g = space.require_grid("ParticleEnsemble::grid_points")?;
        let total = space.total_mass();
        Self::new(g.coords().clone(), space.weights().iter().map(|w| w / total).collect(), "grid")
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    pub fn position(&self, k: usize) -> Vec<f64> {
        self.positions.row(k).to_vec()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.position(k)).collect()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Cloud-in-cell pushforward onto the grid.
    pub fn deposit(&self, space: &MetricMeasureSpace) -> Result<Density> {
        let g = space.require_grid("ParticleEnsemble::deposit")?;
        Density::from_masses(space, &self.deposit_masses(g))
    }

    fn deposit_masses(&self, g: &Grid) -> Vec<f64> {
        let mut acc = vec![0.0; g.len()];
        for (x, m) in self.positions.rows().into_iter().zip(&self.masses) {
            g.deposit(&mut acc, x.as_slice().unwrap(), *m);
        }
        acc
    }

    /// Kernel density estimate of the pushforward: cloud-in-cell followed by
    /// two passes of the `[1, 2, 1]/4` filter along every axis, reflected at
    /// the boundary so mass is kept. Returns `ρ` against the weights.
    pub fn kernel_density(&self, space: &MetricMeasureSpace) -> Result<Vec<f64>> {
        let g = space.require_grid("ParticleEnsemble::kernel_density")?;
        let mut acc = self.deposit_masses(g);
        for _ in 0..KDE_PASSES {
            for a in 0..g.dim() {
                acc = (0..g.len())
                    .map(|i| {
                        let lo = g.shift(i, a, -1).unwrap_or(i);
                        let hi = g.shift(i, a, 1).unwrap_or(i);
                        0.25 * acc[lo] + 0.5 * acc[i] + 0.25 * acc[hi]
                    })
                    .collect();
            }
        }
        Ok(acc.iter().zip(space.weights()).map(|(m, w)| m / w).collect())
    }

    fn with_positions(&self, positions: Array2<f64>) -> Self {
        Self { positions, masses: self.masses.clone(), provenance: self.provenance.clone() }
    }
}

/// What to do with a particle that leaves the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EscapePolicy {
    /// Clamp small excursions; more than one cell out is an error.
    #[default]
    Error,
    /// Clamp the particle on any exit, freeze it there and flag it.
    Freeze,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Keep every `stride`-th step (the final step is always kept).
    pub stride: usize,
    pub escape: EscapePolicy,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { stride: 1, escape: EscapePolicy::Error }
    }
}

/// Time-sampled output of a flow solve.
#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub times: Vec<f64>,
    /// Particle snapshots (empty for Eulerian solves).
    pub particles: Vec<ParticleEnsemble>,
    /// Density snapshots (empty for particle solves).
    pub densities: Vec<Density>,
    /// `max_i ρ_t[i]` per snapshot (kernel density estimate for particles).
    pub compression_series: Vec<f64>,
    pub clamp_events: usize,
    /// Per particle: frozen after leaving the domain.
    pub escaped: Vec<bool>,
    /// Step actually used (the requested step shrunk to divide the horizon).
    pub dt: f64,
    pub stride: usize,
    pub escape: EscapePolicy,
}

impl FlowTrajectory {
    /// Snapshot index of time `t` (within 1e-9).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|s| (s - t).abs() <= 1e-9)
            .ok_or_else(|| Error::Argument(format!("time {t} is not a snapshot time")))
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

fn time_steps(t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return arg(format!("time step must be positive, got {dt}"));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return arg(format!("horizon must be nonnegative, got {t_end}"));
    }
    let n = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    Ok(if n == 0 { (0, dt) } else { (n, t_end / n as f64) })
}

fn velocity(g: &Grid, b: &Array2<f64>, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, w) in g.stencil(x) {
        for (a, v) in out.iter_mut().enumerate() {
            *v += w * b[[i, a]];
        }
    }
}

struct Track {
    samples: Vec<Vec<f64>>,
    clamps: usize,
    escaped: bool,
}

#[allow(clippy::too_many_arguments)]
fn integrate(g: &Grid, b: &Array2<f64>, x0: &[f64], steps: usize, dt: f64, stride: usize, policy: EscapePolicy, id: usize) -> Result<Track> {
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut samples = vec![x.clone()];
    let (mut clamps, mut escaped) = (0, false);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut y = vec![0.0; d];
    let h = g.spacing();
    for step in 1..=steps {
        if !escaped {
            velocity(g, b, &x, &mut k1);
            (0..d).for_each(|a| y[a] = x[a] + 0.5 * dt * k1[a]);
            velocity(g, b, &y, &mut k2);
            (0..d).for_each(|a| y[a] = x[a] + 0.5 * dt * k2[a]);
            velocity(g, b, &y, &mut k3);
            (0..d).for_each(|a| y[a] = x[a] + dt * k3[a]);
            velocity(g, b, &y, &mut k4);
            (0..d).for_each(|a| x[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]));

            let far = (0..d).any(|a| x[a] < g.lower()[a] - h || x[a] > g.upper()[a] + h);
            if far && policy == EscapePolicy::Error {
                return Err(Error::Escape { particle: id, position: x });
            }
            let outside = (0..d).any(|a| x[a] < g.lower()[a] || x[a] > g.upper()[a]);
            if outside {
                (0..d).for_each(|a| x[a] = x[a].clamp(g.lower()[a], g.upper()[a]));
                clamps += 1;
                escaped = policy == EscapePolicy::Freeze;
            }
        }
        if step % stride == 0 || step == steps {
            samples.push(x.clone());
        }
    }
    Ok(Track { samples, clamps, escaped })
}

fn grid_velocity<'a>(space: &'a MetricMeasureSpace, b: &'a VectorField, op: &'static str) -> Result<(&'a Grid, &'a Array2<f64>)> {
    let g = space.require_grid(op)?;
    b.check(space)?;
    Ok((g, b.grid_values().unwrap()))
}

fn snapshot_times(steps: usize, dt: f64, stride: usize) -> Vec<f64> {
    let mut times = vec![0.0];
    for step in 1..=steps {
        if step % stride == 0 || step == steps {
            times.push(step as f64 * dt);
        }
    }
    times
}

/// RK4 particle flow with the default options.
pub fn lagrangian_flow(space: &MetricMeasureSpace, b: &VectorField, particles: &ParticleEnsemble, t_end: f64, dt: f64) -> Result<FlowTrajectory> {
    lagrangian_flow_with(space, b, particles, t_end, dt, &FlowOptions::default())
}

/// Classical RK4 for `ẋ = b(x)` with multilinear velocity interpolation.
pub fn lagrangian_flow_with(
    space: &MetricMeasureSpace,
    b: &VectorField,
    particles: &ParticleEnsemble,
    t_end: f64,
    dt: f64,
    opts: &FlowOptions,
) -> Result<FlowTrajectory> {
    let (g, bv) = grid_velocity(space, b, "lagrangian_flow")?;
    if opts.stride == 0 {
        return arg("stride must be positive");
    }
    if particles.dim() != g.dim() {
        return arg(format!("particles are {}-dimensional, grid is {}-dimensional", particles.dim(), g.dim()));
    }
    if let Some(k) = (0..particles.len()).find(|&k| !g.contains(&particles.position(k))) {
        return arg(format!("particle {k} starts outside the domain at {:?}", particles.position(k)));
    }
    let (steps, dt) = time_steps(t_end, dt)?;
    let tracks: Vec<Result<Track>> = (0..particles.len())
        .into_par_iter()
        .map(|k| integrate(g, bv, &particles.position(k), steps, dt, opts.stride, opts.escape, k))
        .collect();
    let tracks = tracks.into_iter().collect::<Result<Vec<_>>>()?;

    let times = snapshot_times(steps, dt, opts.stride);
    let d = g.dim();
    let mut snaps = Vec::with_capacity(times.len());
    let mut compression = Vec::with_capacity(times.len());
    for s in 0..times.len() {
        let pos = Array2::from_shape_fn((tracks.len(), d), |(k, a)| tracks[k].samples[s][a]);
        let ens = particles.with_positions(pos);
        compression.push(ens.kernel_density(space)?.into_iter().fold(0.0, f64::max));
        snaps.push(ens);
    }
    Ok(FlowTrajectory {
        times,
        particles: snaps,
        densities: Vec::new(),
        compression_series: compression,
        clamp_events: tracks.iter().map(|t| t.clamps).sum(),
        escaped: tracks.iter().map(|t| t.escaped).collect(),
        dt,
        stride: opts.stride,
        escape: opts.escape,
    })
}

/// Largest step the upwind scheme accepts for `b`.
pub fn max_stable_dt(space: &MetricMeasureSpace, b: &VectorField) -> Result<f64> {
    let (g, bv) = grid_velocity(space, b, "max_stable_dt")?;
    // sum over axes of the largest face speed bounds the outflow fraction of any cell
    let speed: f64 = (0..g.dim()).map(|a| bv.column(a).iter().fold(0.0f64, |m, v| m.max(v.abs()))).sum();
    Ok(if speed == 0.0 { f64::INFINITY } else { CFL_LIMIT * g.spacing() / speed })
}

/// First-order upwind finite volumes with closed boundaries, every step kept.
pub fn solve_continuity(space: &MetricMeasureSpace, b: &VectorField, mu0: &Density, t_end: f64, dt: f64) -> Result<FlowTrajectory> {
    solve_continuity_with(space, b, mu0, t_end, dt, 1)
}

pub fn solve_continuity_with(
    space: &MetricMeasureSpace,
    b: &VectorField,
    mu0: &Density,
    t_end: f64,
    dt: f64,
    stride: usize,
) -> Result<FlowTrajectory> {
    let (g, bv) = grid_velocity(space, b, "solve_continuity")?;
    if stride == 0 {
        return arg("stride must be positive");
    }
    if mu0.len() != space.len() {
        return arg("initial density does not match the space");
    }
    let max_dt = max_stable_dt(space, b)?;
    let (steps, dt) = time_steps(t_end, dt)?;
    if steps > 0 && dt > max_dt * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, max_dt });
    }
    let d = g.dim();
    let n = g.len();
    let lam = dt / g.spacing();
    // face speeds between i and its upper neighbour along each axis
    let faces: Vec<Vec<Option<(usize, f64)>>> = (0..n)
        .map(|i| (0..d).map(|a| g.shift(i, a, 1).map(|j| (j, 0.5 * (bv[[i, a]] + bv[[j, a]])))).collect())
        .collect();
    let lower: Vec<Vec<Option<usize>>> = (0..n).map(|i| (0..d).map(|a| g.shift(i, a, -1)).collect()).collect();
    let flux = |rho: &[f64], i: usize, j: usize, v: f64| v.max(0.0) * rho[i] - (-v).max(0.0) * rho[j];

    let mut rho = mu0.rho().to_vec();
    let mut times = vec![0.0];
    let mut densities = vec![mu0.clone()];
    for step in 1..=steps {
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut net = 0.0;
                for a in 0..d {
                    if let Some((j, v)) = faces[i][a] {
                        net += flux(&rho, i, j, v);
                    }
                    if let Some(k) = lower[i][a] {
                        let (_, v) = faces[k][a].unwrap();
                        net -= flux(&rho, k, i, v);
                    }
                }
                rho[i] - lam * net
            })
            .collect();
        rho = next;
        if step % stride == 0 || step == steps {
            times.push(step as f64 * dt);
            densities.push(Density::new(space, rho.clone())?);
        }
    }
    Ok(FlowTrajectory {
        times,
        particles: Vec::new(),
        compression_series: densities.iter().map(Density::compression).collect(),
        densities,
        clamp_events: 0,
        escaped: Vec::new(),
        dt,
        stride,
        escape: EscapePolicy::Error,
    })
}

/// Regular-Lagrangian-flow defects of a particle trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDiagnostics {
    /// `max | |Ḟ_t| − |b|∘F_t |` from snapshot differences.
    pub speed_defect: Option<f64>,
    /// `max |F_{s+t}(x) − F_t(F_s(x))|` with `s + t` the final time.
    pub semigroup_defect: Option<f64>,
    pub semigroup_split: Option<f64>,
    pub compression_max: f64,
    pub compression_series: Vec<f64>,
}

/// Re-integrates from the snapshot at time `s` up to the final time and
/// compares with the stored endpoint. Particles frozen in either run are skipped.
pub fn semigroup_defect(space: &MetricMeasureSpace, traj: &FlowTrajectory, b: &VectorField, s: f64) -> Result<f64> {
    if traj.particles.is_empty() {
        return arg("semigroup defect needs a particle trajectory");
    }
    let k = traj.index_of(s)?;
    let t = traj.final_time() - traj.times[k];
    let opts = FlowOptions { stride: usize::MAX, escape: EscapePolicy::Freeze };
    let again = lagrangian_flow_with(space, b, &traj.particles[k], t, traj.dt, &opts)?;
    let (end, redo) = (traj.particles.last().unwrap(), again.particles.last().unwrap());
    let mut worst = 0.0f64;
    for p in 0..end.len() {
        if traj.escaped[p] || again.escaped[p] {
            continue;
        }
        let e = (0..end.dim()).map(|a| (end.positions()[[p, a]] - redo.positions()[[p, a]]).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Speed identity, semigroup property at the midpoint, and compression.
pub fn flow_diagnostics(space: &MetricMeasureSpace, traj: &FlowTrajectory, b: &VectorField) -> Result<FlowDiagnostics> {
    let compression_max = traj.compression_series.iter().copied().fold(0.0, f64::max);
    let base = FlowDiagnostics {
        speed_defect: None,
        semigroup_defect: None,
        semigroup_split: None,
        compression_max,
        compression_series: traj.compression_series.clone(),
    };
    if traj.particles.is_empty() {
        return Ok(base);
    }
    let (g, bv) = grid_velocity(space, b, "flow_diagnostics")?;
    let d = g.dim();
    let mut speed = 0.0f64;
    let mut v = vec![0.0; d];
    for w in 0..traj.times.len() - 1 {
        let span = traj.times[w + 1] - traj.times[w];
        let (p0, p1) = (traj.particles[w].positions(), traj.particles[w + 1].positions());
        for p in (0..p0.nrows()).filter(|&p| !traj.escaped[p]) {
            let mid: Vec<f64> = (0..d).map(|a| 0.5 * (p0[[p, a]] + p1[[p, a]])).collect();
            velocity(g, bv, &mid, &mut v);
            let fd = (0..d).map(|a| (p1[[p, a]] - p0[[p, a]]).powi(2)).sum::<f64>().sqrt() / span;
            speed = speed.max((fd - v.iter().map(|x| x * x).sum::<f64>().sqrt()).abs());
        }
    }
    let mid = (traj.times.len() - 1) / 2;
    let (semigroup_defect, semigroup_split) = if mid > 0 {
        let s = traj.times[mid];
        (Some(semigroup_defect(space, traj, b, s)?), Some(s))
    } else {
        (None, None)
    };
    Ok(FlowDiagnostics { speed_defect: Some(speed), semigroup_defect, semigroup_split, ..base })
}

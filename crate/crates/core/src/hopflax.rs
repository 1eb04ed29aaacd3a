//! Hopf-Lax semigroup `Q_t φ(x) = min_y d²(x, y)/(2t) + φ(y)`.

use rayon::prelude::*;

use crate::calculus::weak_gradient_norm;
use crate::error::{arg, Error, Result};
use crate::field::ScalarField;
use crate::space::MetricMeasureSpace;
use crate::transport::{c_transform, TransportSolution};

/// Tolerance for the double c-transform smoke check on evolved potentials.
pub const C_CONCAVE_TOL: f64 = 1e-9;

/// Brute-force inf-convolution over all points.
pub fn hopf_lax(space: &MetricMeasureSpace, phi: &ScalarField, t: f64) -> Result<ScalarField> {
    if !(t >= 0.0) {
        return arg(format!("Hopf-Lax time must be nonnegative, got {t}"));
    }
    if phi.len() != space.len() {
        return arg(format!("field has {} values, space has {} points", phi.len(), space.len()));
    }
    if !phi.is_finite() {
        return Err(Error::Data("field has non-finite entries".into()));
    }
    if t == 0.0 {
        return Ok(phi.clone());
    }
    let v = phi.values();
    let n = space.len();
    let out = (0..n)
        .into_par_iter()
        .map(|x| (0..n).map(|y| space.dist(x, y).powi(2) / (2.0 * t) + v[y]).fold(f64::INFINITY, f64::min))
        .collect();
    Ok(ScalarField::new(out))
}

/// Pointwise Hamilton-Jacobi defect `∂_t Q_tφ + ½|D Q_tφ|²`, with the time
/// derivative taken by central differences of step `dt`.
pub fn hj_residual(space: &MetricMeasureSpace, phi: &ScalarField, t: f64, dt: f64) -> Result<ScalarField> {
    if !(dt > 0.0 && t > dt) {
        return arg(format!("need t > dt > 0, got t = {t}, dt = {dt}"));
    }
    let ahead = hopf_lax(space, phi, t + dt)?;
    let behind = hopf_lax(space, phi, t - dt)?;
    let now = hopf_lax(space, phi, t)?;
    let slope = weak_gradient_norm(space, &now)?;
    Ok(ScalarField::new(
        (0..space.len())
            .map(|i| (ahead[i] - behind[i]) / (2.0 * dt) + 0.5 * slope[i] * slope[i])
            .collect(),
    ))
}

/// Kantorovich potentials at an intermediate time of a geodesic.
#[derive(Debug, Clone)]
pub struct EvolvedPotentials {
    /// `t·Q_t(−φ)`: potential from `μ_t` to `μ_0`.
    pub toward_start: ScalarField,
    /// `(1−t)·Q_{1−t}(−φ^c)`: potential from `μ_t` to `μ_1`.
    pub toward_end: ScalarField,
    /// `max |ψ^{cc} − ψ|` for each of the two potentials.
    pub c_concavity_defect: (f64, f64),
}

fn double_c_defect(space: &MetricMeasureSpace, f: &ScalarField) -> Result<f64> {
    let cc = c_transform(space, &c_transform(space, f)?)?;
    Ok(cc.values().iter().zip(f.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

pub fn evolve_potentials(space: &MetricMeasureSpace, solution: &TransportSolution, t: f64) -> Result<EvolvedPotentials> {
    if !(t > 0.0 && t < 1.0) {
        return arg(format!("evolution time must lie in (0, 1), got {t}"));
    }
    let toward_start = hopf_lax(space, &solution.phi.scale(-1.0), t)?.scale(t);
    let toward_end = hopf_lax(space, &solution.phi_c.scale(-1.0), 1.0 - t)?.scale(1.0 - t);
    let defects = (double_c_defect(space, &toward_start)?, double_c_defect(space, &toward_end)?);
    if defects.0 > C_CONCAVE_TOL || defects.1 > C_CONCAVE_TOL {
        return Err(Error::Data(format!("evolved potentials are not c-concave (defects {:e}, {:e})", defects.0, defects.1)));
    }
    Ok(EvolvedPotentials { toward_start, toward_end, c_concavity_defect: defects })
}

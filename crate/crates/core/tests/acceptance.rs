//! Acceptance criteria. Runs as a plain binary and prints one line per
//! criterion; exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use kconvex_core::calculus::{gradient, hessian, infinitesimal_check};
use kconvex_core::flow::{lagrangian_flow, ParticleEnsemble};
use kconvex_core::hopflax::{hj_residual, hopf_lax};
use kconvex_core::transport::{w2, w2_clouds, Method};
use kconvex_core::verify::{
    check_entropy_convexity, check_evi, check_gradient_estimate, check_k_monotone, demo_rigidity, interpolation_schedule,
    run_equivalence_suite, CheckSettings, PropertyCheck, RigidityMode, Scenario, Verdict,
};
use kconvex_core::{build_grid, Density, MetricMeasureSpace, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

const H: f64 = 0.02;

fn line() -> MetricMeasureSpace {
    build_grid(&[(-3.0, 3.0)], H).unwrap()
}

fn square() -> MetricMeasureSpace {
    build_grid(&[(-1.0, 1.0), (-1.0, 1.0)], 0.05).unwrap()
}

fn quad(s: &MetricMeasureSpace, lam: f64) -> ScalarField {
    ScalarField::from_fn(s, |x| 0.5 * lam * x.iter().map(|v| v * v).sum::<f64>()).unwrap()
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn interior_sup(s: &MetricMeasureSpace, f: impl Fn(usize) -> f64) -> f64 {
    s.grid().unwrap().interior_indices().into_iter().map(f).fold(0.0, f64::max)
}

fn c1_quadratic_contraction() -> Outcome {
    let start = Instant::now();
    let s = line();
    let b = gradient(&s, &quad(&s, 1.0)).map_err(e)?.neg();
    let pa = ParticleEnsemble::from_density(&s, &Density::bump(&s, &[-1.0], 0.3).map_err(e)?, "mu").map_err(e)?;
    let pb = ParticleEnsemble::from_density(&s, &Density::bump(&s, &[1.0], 0.3).map_err(e)?, "nu").map_err(e)?;
    let ta = lagrangian_flow(&s, &b, &pa, 1.0, 1e-3).map_err(e)?;
    let tb = lagrangian_flow(&s, &b, &pb, 1.0, 1e-3).map_err(e)?;
    let dist = |x: &ParticleEnsemble, y: &ParticleEnsemble| w2_clouds(&x.points(), x.masses(), &y.points(), y.masses()).map(|c| c.w2);
    let w0 = dist(&pa, &pb).map_err(e)?;
    let mut worst = 0.0f64;
    for t in [0.25, 0.5, 1.0] {
        let wt = dist(&ta.particles[ta.index_of(t).map_err(e)?], &tb.particles[tb.index_of(t).map_err(e)?]).map_err(e)?;
        worst = worst.max(((wt / w0) / (-t).exp() - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst <= 0.02 && secs < 10.0, format!("max relative deviation from e^-t {worst:.3e} (limit 2e-2), {secs:.2} s (limit 10 s)")))
}

fn c2_hopf_lax_oracle() -> Outcome {
    let start = Instant::now();
    let s = line();
    let phi = quad(&s, 1.0);
    let mut worst = 0.0f64;
    for t in [0.1, 0.5, 1.0] {
        let q = hopf_lax(&s, &phi, t).map_err(e)?;
        let g = s.grid().unwrap();
        worst = worst.max(interior_sup(&s, |i| {
            let x = g.point(i)[0];
            (q[i] - x * x / (2.0 * (1.0 + t))).abs()
        }));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst <= 2.0 * H && secs < 5.0, format!("sup interior error {worst:.3e} (limit {:.1e}), {secs:.2} s (limit 5 s)", 2.0 * H)))
}

fn c3_hj_residual() -> Outcome {
    let s = line();
    let r = hj_residual(&s, &quad(&s, 1.0), 0.5, 1e-3).map_err(e)?;
    let sup = interior_sup(&s, |i| r[i].abs());
    Ok((sup <= 5e-2, format!("sup interior residual {sup:.3e} (limit 5e-2)")))
}

fn translates(s: &MetricMeasureSpace) -> Result<(Density, Density), String> {
    Ok((Density::bump(s, &[-0.5], 0.2).map_err(e)?, Density::bump(s, &[0.5], 0.2).map_err(e)?))
}

fn c4_k_monotone_equality() -> Outcome {
    let s = line();
    let b = gradient(&s, &quad(&s, 1.0)).map_err(e)?;
    let (mu0, mu1) = translates(&s)?;
    let set = CheckSettings::default();
    let at1 = check_k_monotone(&s, &b, 1.0, &mu0, &mu1, &set).map_err(e)?;
    let lhs = at1.witnesses["lhs"].as_f64().unwrap();
    let w2sq = at1.witnesses["w2_squared"].as_f64().unwrap();
    let rel = (lhs - w2sq).abs() / w2sq;
    let at2 = check_k_monotone(&s, &b, 2.0, &mu0, &mu1, &set).map_err(e)?;
    let ok = rel <= 5e-3 && at2.margin <= -0.5 * w2sq && !at2.pass;
    Ok((ok, format!("|LHS - W2^2|/W2^2 = {rel:.3e} (limit 5e-3); K=2 margin {:.3e} (needs <= {:.3e})", at2.margin, -0.5 * w2sq)))
}

fn c5_infinitesimal() -> Outcome {
    let s = line();
    let u = quad(&s, 1.0);
    let hess = hessian(&s, &u).map_err(e)?;
    let dev = interior_sup(&s, |i| (hess.at(i)[(0, 0)] - 1.0).abs());
    let m = infinitesimal_check(&s, &gradient(&s, &u).map_err(e)?, 1.0).map_err(e)?.worst_margin;
    let sq = square();
    let saddle = ScalarField::from_fn(&sq, |x| 0.5 * (x[0] * x[0] - x[1] * x[1])).map_err(e)?;
    let ms = infinitesimal_check(&sq, &gradient(&sq, &saddle).map_err(e)?, -1.0).map_err(e)?.worst_margin;
    let ok = dev <= 1e-9 && m.abs() <= 1e-9 && ms.abs() <= 1e-9;
    Ok((ok, format!("hessian deviation {dev:.3e}; margin at K=1 {m:.3e}; saddle margin at K=-1 {ms:.3e} (all within 1e-9)")))
}

fn c6_gradient_estimate() -> Outcome {
    let s = line();
    let b = gradient(&s, &quad(&s, 1.0)).map_err(e)?.neg();
    let f = ScalarField::from_fn(&s, |x| x[0]).map_err(e)?;
    let r = check_gradient_estimate(&s, &b, 1.0, &f, 1.0, &[0.5, 1.0], &CheckSettings::default()).map_err(e)?;
    let dev = r.witnesses["max_abs_deviation"].as_f64().unwrap();
    Ok((dev <= 1e-4, format!("sup interior | |D(f o F_t)| - e^-t |Df| o F_t | = {dev:.3e} (limit 1e-4)")))
}

fn c7_evi() -> Outcome {
    let s = line();
    let sc = Scenario::default();
    let (mu0, nu) = (sc.evi_start.density(&s).map_err(e)?, sc.evi_target.density(&s).map_err(e)?);
    let r = check_evi(&s, &quad(&s, 1.0), 1.0, &mu0, &nu, 1.0, 1e-3, &CheckSettings::default()).map_err(e)?;
    Ok((r.pass, format!("margin {:.3e} (needs >= -{:.3e})", r.margin, r.tolerance)))
}

fn random_pairs(seed: u64, first_axis: (f64, f64)) -> Vec<[Vec<f64>; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || vec![rng.gen_range(first_axis.0..=first_axis.1), rng.gen_range(-1.0..=1.0)];
    (0..6).map(|_| [draw(), draw()]).collect()
}

fn property_line(checks: &[PropertyCheck]) -> String {
    checks.iter().map(|c| format!("{} {:.2e}/{:.0e}", c.name, c.worst_violation, c.tolerance)).collect::<Vec<_>>().join(", ")
}

fn c8_splitting() -> Outcome {
    let pairs = random_pairs(8, (0.0, 1.0));
    let r = demo_rigidity(&square(), RigidityMode::Splitting, &pairs, 1.0, &CheckSettings::default()).map_err(e)?;
    let all: Vec<PropertyCheck> = r.hypotheses.iter().chain(&r.flow_checks).cloned().collect();
    let need = ["hessian_zero", "unit_slope", "isometry_drift"];
    let ok = need.iter().all(|n| all.iter().any(|c| c.name == *n && c.pass && c.worst_violation <= 1e-9));
    Ok((ok && r.pass, property_line(&all)))
}

fn c9_cone() -> Outcome {
    let pairs = random_pairs(9, (-1.0, 1.0));
    let r = demo_rigidity(&square(), RigidityMode::Cone, &pairs, 1.0, &CheckSettings::default()).map_err(e)?;
    let exact = ["hessian_identity", "laplacian_dimension", "slope_squared_twice_u"];
    let ok_h = exact.iter().all(|n| r.hypotheses.iter().any(|c| c.name == *n && c.worst_violation <= 1e-9));
    let ratio = r.ratio.ok_or("no ratio reported")?;
    let ratio_err = (ratio - (-1.0f64).exp()).abs();
    let all_pairs = r.flow_checks.iter().find(|c| c.name == "dilation_ratio").map(|c| c.worst_violation).unwrap_or(f64::INFINITY);
    let ok = ok_h && ratio_err <= 1e-6 && all_pairs <= 1e-6 && r.pass;
    Ok((ok, format!("{}; ratio at t=1 {ratio:.9} (|err| {ratio_err:.2e}, limit 1e-6)", property_line(&r.hypotheses))))
}

fn c10_schedule() -> Outcome {
    let mut ends_exact = true;
    let mut worst = 0.0f64;
    let step = 1e-5;
    for k in [-1.0, 0.0, 1.0] {
        for t in [0.1, 1.0] {
            let at = |r: f64| interpolation_schedule(r, k, t).map_err(e);
            ends_exact &= at(0.0)?.0 == 0.0 && at(1.0)?.0 == 1.0;
            if k == 0.0 {
                ends_exact &= at(0.3)?.1 == 1.0;
            }
            for j in 1..10 {
                let r = j as f64 / 10.0;
                let fd = (at(r + step)?.0 - at(r - step)?.0) / (2.0 * step);
                let exact = at(r)?.1 * (2.0 * k * r * t).exp();
                worst = worst.max((fd - exact).abs());
            }
        }
    }
    Ok((ends_exact && worst <= 1e-8, format!("endpoints and R_0 exact: {ends_exact}; max |FD delta' - R_K e^(2Krt)| {worst:.3e} (limit 1e-8)")))
}

fn random_density(s: &MetricMeasureSpace, rng: &mut ChaCha8Rng) -> Result<Density, String> {
    Density::normalized(s, (0..s.len()).map(|_| rng.gen_range(0.05..1.0)).collect()).map_err(e)
}

fn c11_transport() -> Outcome {
    let s = line();
    let g = s.grid().unwrap();
    let x = |i: usize| g.point(i)[0];
    let mu = Density::uniform_on(&s, |i| x(i) > -1.5 - 1e-9 && x(i) < -0.5 - 1e-9).map_err(e)?;
    let nu = Density::uniform_on(&s, |i| x(i) > -0.5 - 1e-9 && x(i) < 0.5 - 1e-9).map_err(e)?;
    let exact = w2(&s, &mu, &nu, Method::ExactLp).map_err(e)?;
    let lp_err = (exact.w2 - 1.0).abs();

    let small = build_grid(&[(0.0, 49.0 * H)], H).map_err(e)?;
    assert_eq!(small.len(), 50);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut entropic_rel = 0.0f64;
    let mut gap = exact.gap.abs();
    for _ in 0..5 {
        let (a, b) = (random_density(&small, &mut rng)?, random_density(&small, &mut rng)?);
        let lp = w2(&small, &a, &b, Method::ExactLp).map_err(e)?;
        let en = w2(&small, &a, &b, Method::Entropic { epsilon: 0.01 * H * H }).map_err(e)?;
        gap = gap.max(lp.gap.abs());
        entropic_rel = entropic_rel.max((en.w2 - lp.w2).abs() / lp.w2);
    }
    let (mut sym, mut tri) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..20 {
        let m: Vec<Density> = (0..3).map(|_| random_density(&small, &mut rng)).collect::<Result<_, _>>()?;
        let d = |i: usize, j: usize| w2(&small, &m[i], &m[j], Method::ExactLp).map(|r| r.w2).map_err(e);
        sym = sym.max((d(0, 1)? - d(1, 0)?).abs());
        tri = tri.max(d(0, 2)? - d(0, 1)? - d(1, 2)?);
    }
    let ok = lp_err <= 1e-6 && gap <= 1e-7 && entropic_rel <= 1e-2 && sym <= 1e-9 && tri <= 1e-7;
    Ok((
        ok,
        format!(
            "LP translate error {lp_err:.2e}; max gap {gap:.2e}; entropic rel diff {entropic_rel:.2e} (limit 1e-2); symmetry {sym:.2e}; triangle excess {tri:.2e}"
        ),
    ))
}

fn verdicts(s: &MetricMeasureSpace, lam: f64, ks: [f64; 2]) -> Result<[(Verdict, String); 2], String> {
    let u = quad(s, lam);
    let run = |k: f64| -> Result<(Verdict, String), String> {
        let r = run_equivalence_suite(s, &u, k, &Scenario::default()).map_err(e)?;
        let failing: Vec<&str> = r.reports.iter().filter(|c| !c.pass).map(|c| c.check_id.as_str()).collect();
        Ok((r.verdict, failing.join("+")))
    };
    Ok([run(ks[0])?, run(ks[1])?])
}

fn c12_equivalence_coherence() -> Outcome {
    let start = Instant::now();
    let s = line();
    let mut ok = true;
    let mut parts = Vec::new();
    for lam in [0.5, 1.0, 2.0] {
        let [(at, fa), (above, _)] = verdicts(&s, lam, [lam, lam + 0.5])?;
        ok &= at == Verdict::AllPass && above == Verdict::AllFail;
        parts.push(format!("lambda={lam}: K=lambda {at:?}{} / K=lambda+0.5 {above:?}", if fa.is_empty() { String::new() } else { format!(" [{fa}]") }));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    Ok((ok, format!("{}; {secs:.1} s (limit 120 s)", parts.join("; "))))
}

fn c13_entropy() -> Outcome {
    let s = line();
    let ts = [0.25, 0.5, 0.75];
    let set = CheckSettings::default();
    let (mu0, mu1) = translates(&s)?;
    let tr = check_entropy_convexity(&s, &mu0, &mu1, 0.0, &ts, &set).map_err(e)?;
    let wide = Density::bump(&s, &[0.5], 0.4).map_err(e)?;
    let dw = check_entropy_convexity(&s, &mu0, &wide, 0.0, &ts, &set).map_err(e)?;
    let ok = tr.margin.abs() <= tr.tolerance && dw.pass;
    Ok((ok, format!("translate margin {:.3e} (|.| <= {:.1e}); distinct-width margin {:.3e} (>= -{:.1e})", tr.margin, tr.tolerance, dw.margin, dw.tolerance)))
}

fn c14_negative_control() -> Outcome {
    let s = line();
    let [(at0, _), (at_neg, f1)] = verdicts(&s, -1.0, [0.0, -1.0])?;
    let ok = at0 == Verdict::AllFail && at_neg == Verdict::AllPass;
    Ok((ok, format!("K=0 {at0:?}; K=-1 {at_neg:?}{}", if f1.is_empty() { String::new() } else { format!(" [{f1}]") })))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 14] = [
        ("quadratic contraction", c1_quadratic_contraction),
        ("Hopf-Lax oracle", c2_hopf_lax_oracle),
        ("Hamilton-Jacobi residual", c3_hj_residual),
        ("K-monotonicity equality case", c4_k_monotone_equality),
        ("infinitesimal certification", c5_infinitesimal),
        ("gradient estimate", c6_gradient_estimate),
        ("EVI", c7_evi),
        ("splitting demo", c8_splitting),
        ("cone demo", c9_cone),
        ("interpolation schedule", c10_schedule),
        ("transport correctness", c11_transport),
        ("equivalence coherence", c12_equivalence_coherence),
        ("entropy convexity", c13_entropy),
        ("negative control", c14_negative_control),
    ];
    let mut failures = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let (pass, detail) = run().unwrap_or_else(|err| (false, format!("error: {err}")));
        failures += usize::from(!pass);
        println!("criterion {:2} {:<30} {}  {detail}", n + 1, name, if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

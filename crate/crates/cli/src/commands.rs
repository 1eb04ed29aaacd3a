//! Subcommand pipelines. Computations may run in parallel inside the core
//! library; all files are written here, sequentially.

use anyhow::{anyhow, bail, Context, Result};
use kconvex_core::calculus::gradient;
use kconvex_core::flow::{lagrangian_flow_with, solve_continuity_with, EscapePolicy, FlowOptions, ParticleEnsemble};
use kconvex_core::hopflax::{hj_residual, hopf_lax};
use kconvex_core::io::{fmt_f64, write_density, write_rows, write_scalar_field};
use kconvex_core::space::validate_metric;
use kconvex_core::transport::{w2 as solve_w2, Method};
use kconvex_core::verify::{demo_rigidity, run_equivalence_suite, CheckSettings, RigidityMode, SuiteReport, VerificationReport};
use kconvex_core::MetricMeasureSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{config_hash, load, Config, FlowSolver, Loaded};
use crate::report::{contraction_plot_csv, render_reports, status_of, OutDir, ReportFormat, Status};
use crate::{Cli, Command, DemoMode, FlowAction, HopflaxAction, MethodArg, SpaceAction, TransportAction};

/// Runs the parsed command line and returns the exit status. A manifest is
/// written even when the pipeline fails part-way.
pub fn run(cli: &Cli) -> Result<Status> {
    let mut out = OutDir::create(&cli.common.out)?;
    let loaded = match &cli.common.config {
        Some(p) => Some(out.stage("load_config", || load(p, &cli.common.overrides))?),
        None if !cli.common.overrides.is_empty() => bail!("--set needs --config"),
        None => None,
    };
    let hash = match &loaded {
        Some(l) => Some(l.hash()?),
        None => None,
    };
    let result = dispatch(cli, loaded.as_ref(), &mut out);
    let status = match &result {
        Ok(s) => *s,
        Err(_) => Status::Error,
    };
    let hash = match (hash, &cli.command) {
        (None, Command::Demo { .. }) => Some(config_hash(&Config::default())?),
        (h, _) => h,
    };
    out.finish(&command_name(&cli.command), hash.as_deref(), cli.common.seed, status)?;
    result
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Space { .. } => "space validate".into(),
        Command::Transport { .. } => "transport w2".into(),
        Command::Hopflax { .. } => "hopflax eval".into(),
        Command::Flow { .. } => "flow run".into(),
        Command::Verify { .. } => "verify".into(),
        Command::Demo { mode: DemoMode::Splitting } => "demo splitting".into(),
        Command::Demo { mode: DemoMode::Cone } => "demo cone".into(),
    }
}

fn require(loaded: Option<&Loaded>) -> Result<&Loaded> {
    loaded.ok_or_else(|| anyhow!("this command needs --config"))
}

fn dispatch(cli: &Cli, loaded: Option<&Loaded>, out: &mut OutDir) -> Result<Status> {
    match &cli.command {
        Command::Space { action: SpaceAction::Validate } => space_validate(require(loaded)?, out),
        Command::Transport { action: TransportAction::W2 { plan } } => transport_w2(cli, require(loaded)?, *plan, out),
        Command::Hopflax { action: HopflaxAction::Eval } => hopflax_eval(require(loaded)?, out),
        Command::Flow { action: FlowAction::Run } => flow_run(require(loaded)?, out),
        Command::Verify { k } => verify(cli, require(loaded)?, k, out),
        Command::Demo { mode } => demo(cli, loaded, *mode, out),
    }
}

fn space_validate(l: &Loaded, out: &mut OutDir) -> Result<Status> {
    let space = out.stage("build_space", || l.space())?;
    let violations = out.stage("validate", || validate_metric(&space));
    let mut summary = json!({
        "backend": space.backend_name(),
        "n_points": space.len(),
        "total_mass": space.total_mass(),
        "valid": violations.is_empty(),
        "violations": violations,
    });
    if let Some(g) = space.grid() {
        summary["shape"] = json!(g.shape());
        summary["spacing"] = json!(g.spacing());
    }
    out.write_json("space.json", &summary)?;
    Ok(Status::from_checks([violations.is_empty()]))
}

/// Default entropic strength: `10⁻² · (smallest positive distance)²`.
fn default_epsilon(space: &MetricMeasureSpace) -> f64 {
    let h = match space.grid() {
        Some(g) => g.spacing(),
        None => (0..space.len())
            .flat_map(|i| (0..space.len()).map(move |j| (i, j)))
            .map(|(i, j)| space.dist(i, j))
            .filter(|&d| d > 0.0)
            .fold(f64::INFINITY, f64::min),
    };
    1e-2 * h * h
}

fn transport_w2(cli: &Cli, l: &Loaded, plan: bool, out: &mut OutDir) -> Result<Status> {
    let cfg = l.config.transport.as_ref().ok_or_else(|| anyhow!("config has no [transport] section"))?;
    let space = out.stage("build_space", || l.space())?;
    let mu = cfg.mu.build(&space, &l.base_dir).context("building mu")?;
    let nu = cfg.nu.build(&space, &l.base_dir).context("building nu")?;
    let entropic = match (cli.common.method, cfg.method.as_deref()) {
        (Some(m), _) => m == MethodArg::Entropic,
        (None, None | Some("exact")) => false,
        (None, Some("entropic")) => true,
        (None, Some(other)) => bail!("transport.method must be 'exact' or 'entropic', got '{other}'"),
    };
    let method = if entropic {
        Method::Entropic { epsilon: cli.common.epsilon.or(cfg.epsilon).unwrap_or_else(|| default_epsilon(&space)) }
    } else {
        Method::ExactLp
    };
    let sol = out.stage("solve", || solve_w2(&space, &mu, &nu, method))?;
    out.write_json("transport.json", &json!({ "w2": sol.w2, "method": sol.method.name(), "gap": sol.gap, "iters": sol.iters }))?;
    if plan || cfg.write_plan {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["from", "to", "mass"])?;
        for e in &sol.plan {
            w.write_record([e.from.to_string(), e.to.to_string(), fmt_f64(e.mass)])?;
        }
        out.write_text("plan.csv", &String::from_utf8(w.into_inner()?)?)?;
    }
    Ok(Status::Pass)
}

fn hopflax_eval(l: &Loaded, out: &mut OutDir) -> Result<Status> {
    let cfg = l.config.hopflax.as_ref().ok_or_else(|| anyhow!("config has no [hopflax] section"))?;
    let space = out.stage("build_space", || l.space())?;
    let phi = match &cfg.phi {
        Some(p) => p.build(&space, &l.base_dir)?,
        None => l.potential(&space)?,
    };
    let interior: Vec<usize> = space.grid().map(|g| g.interior_indices()).unwrap_or_else(|| (0..space.len()).collect());
    let (mut files, mut residual_files, mut residual_max) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &t) in cfg.times.iter().enumerate() {
        let q = out.stage(&format!("hopf_lax_{i:03}"), || hopf_lax(&space, &phi, t))?;
        let name = format!("hopflax_{i:03}.csv");
        out.write_with(&name, |p| write_scalar_field(p, &q))?;
        files.push(name);
        if let Some(dt) = cfg.residual_dt {
            let r = out.stage(&format!("hj_residual_{i:03}"), || hj_residual(&space, &phi, t, dt))?;
            let name = format!("hj_residual_{i:03}.csv");
            out.write_with(&name, |p| write_scalar_field(p, &r))?;
            residual_files.push(name);
            residual_max.push(interior.iter().map(|&j| r[j].abs()).fold(0.0, f64::max));
        }
    }
    let mut summary = json!({ "times": cfg.times, "files": files });
    if cfg.residual_dt.is_some() {
        summary["residual_dt"] = json!(cfg.residual_dt);
        summary["residual_files"] = json!(residual_files);
        summary["max_interior_residual"] = json!(residual_max);
    }
    out.write_json("hopflax.json", &summary)?;
    Ok(Status::Pass)
}

fn flow_run(l: &Loaded, out: &mut OutDir) -> Result<Status> {
    let cfg = l.config.flow.as_ref().ok_or_else(|| anyhow!("config has no [flow] section"))?;
    let space = out.stage("build_space", || l.space())?;
    let u = l.potential(&space)?;
    let velocity = gradient(&space, &u)?.neg();
    let mu0 = cfg.initial.build(&space, &l.base_dir).context("building the initial measure")?;
    let mut files = Vec::new();
    let traj = match cfg.solver {
        FlowSolver::Lagrangian => {
            let particles = ParticleEnsemble::from_density(&space, &mu0, "initial")?;
            let escape = if cfg.freeze_escaped { EscapePolicy::Freeze } else { EscapePolicy::Error };
            let opts = FlowOptions { stride: cfg.stride, escape };
            let traj = out.stage("integrate", || lagrangian_flow_with(&space, &velocity, &particles, cfg.horizon, cfg.dt, &opts))?;
            for (k, snap) in traj.particles.iter().enumerate() {
                let rows: Vec<Vec<f64>> = (0..snap.len())
                    .map(|q| snap.positions().row(q).iter().copied().chain([snap.masses()[q]]).collect())
                    .collect();
                let name = format!("snapshot_{k:04}.csv");
                out.write_with(&name, |p| write_rows(p, None, rows.iter().map(|r| r.as_slice())))?;
                files.push(name);
            }
            traj
        }
        FlowSolver::Eulerian => {
            let traj = out.stage("integrate", || solve_continuity_with(&space, &velocity, &mu0, cfg.horizon, cfg.dt, cfg.stride))?;
            for (k, rho) in traj.densities.iter().enumerate() {
                let name = format!("snapshot_{k:04}.csv");
                out.write_with(&name, |p| write_density(p, rho))?;
                files.push(name);
            }
            traj
        }
    };
    let manifest = json!({
        "solver": cfg.solver,
        "times": traj.times,
        "dt": traj.dt,
        "stride": traj.stride,
        "clamp_events": traj.clamp_events,
        "escaped": traj.escaped.iter().filter(|&&e| e).count(),
        "compression_series": traj.compression_series,
        "files": files,
    });
    out.write_json("flow.json", &manifest)?;
    Ok(Status::Pass)
}

fn verify(cli: &Cli, l: &Loaded, ks: &[f64], out: &mut OutDir) -> Result<Status> {
    let ks: Vec<f64> = if ks.is_empty() { l.config.k.clone().unwrap_or_default() } else { ks.to_vec() };
    if ks.is_empty() {
        bail!("no modulus given: pass --K or set K in the config");
    }
    let space = out.stage("build_space", || l.space())?;
    let u = l.potential(&space)?;
    let mut scenario = l.config.scenario.clone().unwrap_or_default();
    if let Some(s) = cli.common.tol_scale {
        scenario.tol_scale = s;
    }
    let mut suites: Vec<SuiteReport> = Vec::new();
    for (i, &k) in ks.iter().enumerate() {
        suites.push(out.stage(&format!("suite_{i:03}"), || run_equivalence_suite(&space, &u, k, &scenario))?);
    }
    let reports: Vec<VerificationReport> = suites.iter().flat_map(|s| s.reports.iter().cloned()).collect();
    out.write_text("report.json", &render_reports(&reports, ReportFormat::Json)?)?;
    out.write_text("report.csv", &render_reports(&reports, ReportFormat::Csv)?)?;
    out.write_json("suites.json", &suites)?;
    out.write_text("contraction_plot.csv", &contraction_plot_csv(&reports)?)?;
    Ok(status_of(&reports))
}

/// Random pairs for the rigidity demos. Splitting pairs keep their first
/// coordinate where both the pair and its mirror image stay in the box
/// while translating by `horizon`.
pub fn demo_pairs(mode: DemoMode, bounds: &[[f64; 2]], horizon: f64, count: usize, seed: u64) -> Result<Vec<[Vec<f64>; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranges: Vec<(f64, f64)> = bounds.iter().map(|&[a, b]| (a, b)).collect();
    if mode == DemoMode::Splitting {
        let (lo, hi) = ranges[0];
        let r = ((lo + horizon).max(horizon - hi), hi.min(-lo));
        if r.1 < r.0 {
            bail!("box is too short along the first axis for a translation of length {horizon}");
        }
        ranges[0] = r;
    }
    let mut draw = || -> Vec<f64> { ranges.iter().map(|&(a, b)| if b > a { rng.gen_range(a..=b) } else { a }).collect() };
    Ok((0..count).map(|_| [draw(), draw()]).collect())
}

fn demo(cli: &Cli, loaded: Option<&Loaded>, mode: DemoMode, out: &mut OutDir) -> Result<Status> {
    let cfg = loaded.and_then(|l| l.config.demo.clone()).unwrap_or_default();
    let bounds: Vec<(f64, f64)> = cfg.bounds.iter().map(|&[a, b]| (a, b)).collect();
    let space = out.stage("build_space", || kconvex_core::space::build_grid(&bounds, cfg.spacing))?;
    let pairs = demo_pairs(mode, &cfg.bounds, cfg.horizon, cfg.pairs, cli.common.seed)?;
    let settings = CheckSettings { dt: cfg.dt, tol_scale: cli.common.tol_scale.unwrap_or(1.0) };
    let rmode = match mode {
        DemoMode::Splitting => RigidityMode::Splitting,
        DemoMode::Cone => RigidityMode::Cone,
    };
    let report = out.stage("demo", || demo_rigidity(&space, rmode, &pairs, cfg.horizon, &settings))?;
    let mut value = serde_json::to_value(&report)?;
    value["pairs"] = json!(pairs);
    value["seed"] = json!(cli.common.seed);
    let name = match mode {
        DemoMode::Splitting => "demo_splitting.json",
        DemoMode::Cone => "demo_cone.json",
    };
    out.write_json(name, &value)?;
    Ok(Status::from_checks([report.pass]))
}

//! Config-file driven command-line front end.
//!
//! Every subcommand reads one TOML file (`--config`), applies flag
//! overrides and writes its artifacts into the output directory:
//!
//! | subcommand | artifacts |
//! |---|---|
//! | `stratify` | `stratify.csv`, `stratify.json` |
//! | `sigma` | `sigma.csv`, `sigma_curve.csv` (one-dimensional Sigma), `sigma.json` |
//! | `transverse` | `transverse.json` |
//! | `design` | `trajectory.csv`, `design.json` |
//! | `bifurcate` | `bifurcation.csv`, `events.json` |
//! | `check` | none |
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on
//! numerical failure.

pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::design::{self, BifurcationSettings, SimulationSettings};
use crate::error::{Error, Result};
use crate::ode::OdeSettings;
use crate::sigma::{self, ContinuationSettings, SigmaSettings};
use crate::sysmodel::{ControlAffineSystem, GridSpec};
use crate::transverse::{self, EquilibriumSettings, TransverseManifold};
use config::{Model, Overrides, Prepared, RunConfig};
use output::{floats, num, nums, object, Cell, Table};

/// Smallest admissible singular value of a splitting or of `G_s`.
const TRANSVERSALITY_TOL: f64 = 1e-8;
/// `|s|` below this is excluded from the decay-rate fit.
const DECAY_FLOOR: f64 = 1e-12;

#[derive(Debug, Parser)]
#[command(
    name = "singset",
    version,
    about = "Singular sets and control-transverse design"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank map of the control distribution over the grid.
    Stratify(Common),
    /// Singular set and its dimension certificate.
    Sigma(Common),
    /// Transversality margins and equilibria of the induced dynamics.
    Transverse(Common),
    /// Invariance feedback and a closed-loop simulation from x0.
    Design(Common),
    /// Equilibria of W(mu) over the parameter range and their events.
    Bifurcate(Common),
    /// Validate the configuration only.
    Check(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    rank_tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    arc_step: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, value_name = "A:B:N", allow_hyphen_values = true)]
    mu_range: Option<String>,
    /// One per axis, or one for all axes.
    #[arg(long, value_name = "MIN:MAX:STEP", allow_hyphen_values = true)]
    grid: Vec<String>,
    #[arg(long, value_name = "MIN:MAX:STEP", allow_hyphen_values = true)]
    seed_grid: Vec<String>,
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            tol: self.tol,
            rank_tol: self.rank_tol,
            max_iter: self.max_iter,
            arc_step: self.arc_step,
            lambda: self.lambda,
            rtol: self.rtol,
            atol: self.atol,
            horizon: self.horizon,
            mu_range: self.mu_range.clone(),
            grid: self.grid.clone(),
            seed_grid: self.seed_grid.clone(),
        }
    }
}

/// Outcome of a subcommand that produced its artifacts.
enum Status {
    Ok,
    /// Artifacts written, but the computation stopped short.
    Numerical(String),
}

struct Context<'a> {
    name: &'static str,
    prepared: Prepared,
    out: PathBuf,
    common: &'a Common,
}

impl Context<'_> {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.common.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn warn(&self, msg: impl AsRef<str>) {
        if !self.common.quiet {
            eprintln!("warning: {}", msg.as_ref());
        }
    }

    fn sys(&self) -> &ControlAffineSystem {
        self.prepared.model.affine()
    }

    fn header(&self) -> Value {
        output::header(self.name, &self.prepared.effective)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn grid(&self) -> Result<&GridSpec> {
        self.prepared
            .effective
            .grid
            .as_ref()
            .ok_or_else(|| Error::Config(format!("`{}` needs [solver].grid or --grid", self.name)))
    }

    fn seed_points(&self) -> Result<Vec<Vec<f64>>> {
        let eff = &self.prepared.effective;
        let grid = eff
            .seed_grid
            .as_ref()
            .or(eff.grid.as_ref())
            .ok_or_else(|| {
                Error::Config(format!(
                    "`{}` needs a seed grid ([solver].seed_grid, grid or --seed-grid)",
                    self.name
                ))
            })?;
        grid.points(eff.grid_cap)
    }

    fn manifold(&self) -> Result<&TransverseManifold> {
        self.prepared
            .manifold
            .as_ref()
            .ok_or_else(|| Error::Config(format!("`{}` needs a [manifold] block", self.name)))
    }

    fn sigma_settings(&self) -> SigmaSettings {
        let e = &self.prepared.effective;
        SigmaSettings {
            tol: e.tol,
            rank_tol: e.rank_tol,
            max_iter: e.max_iter,
        }
    }

    fn equilibrium_settings(&self) -> EquilibriumSettings {
        let e = &self.prepared.effective;
        EquilibriumSettings {
            tol: e.tol,
            rank_tol: e.rank_tol,
            max_iter: e.max_iter,
            transversality_tol: TRANSVERSALITY_TOL,
            ..Default::default()
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, common) = match &cli.command {
        Command::Stratify(c) => ("stratify", c),
        Command::Sigma(c) => ("sigma", c),
        Command::Transverse(c) => ("transverse", c),
        Command::Design(c) => ("design", c),
        Command::Bifurcate(c) => ("bifurcate", c),
        Command::Check(c) => ("check", c),
    };
    match execute(name, common) {
        Ok(Status::Ok) => 0,
        Ok(Status::Numerical(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn execute(name: &'static str, common: &Common) -> Result<Status> {
    let cfg = config::load(&common.config)?;
    let prepared = cfg.prepare(&common.overrides())?;
    let out = common
        .out
        .clone()
        .or_else(|| prepared.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context {
        name,
        prepared,
        out,
        common,
    };
    warn_unused(&ctx, &cfg);
    if name == "check" {
        return check(&ctx);
    }
    std::fs::create_dir_all(&ctx.out)?;
    match name {
        "stratify" => stratify(&ctx),
        "sigma" => sigma_cmd(&ctx),
        "transverse" => transverse_cmd(&ctx),
        "design" => design_cmd(&ctx),
        "bifurcate" => bifurcate(&ctx),
        _ => unreachable!("clap restricts subcommands"),
    }
}

fn warn_unused(ctx: &Context<'_>, cfg: &RunConfig) {
    let manifold_used = matches!(ctx.name, "transverse" | "design" | "bifurcate" | "check");
    if cfg.manifold.is_some() && !manifold_used {
        ctx.warn(format!("[manifold] is not used by `{}`", ctx.name));
    }
    let s = &cfg.solver;
    let unused: Vec<&str> = [
        ("lambda", s.lambda.is_some() && ctx.name != "design"),
        ("x0", s.x0.is_some() && ctx.name != "design"),
        (
            "control_bounds",
            s.control_bounds.is_some() && ctx.name != "design",
        ),
        ("horizon", s.horizon.is_some() && ctx.name != "design"),
        ("report_dt", s.report_dt.is_some() && ctx.name != "design"),
        ("arc_step", s.arc_step.is_some() && ctx.name != "sigma"),
    ]
    .into_iter()
    .filter(|(_, flag)| *flag && ctx.name != "check")
    .map(|(k, _)| k)
    .collect();
    if !unused.is_empty() {
        ctx.warn(format!(
            "[solver] {} not used by `{}`",
            unused.join(", "),
            ctx.name
        ));
    }
}

fn check(ctx: &Context<'_>) -> Result<Status> {
    let sys = ctx.sys();
    let kind = match &ctx.prepared.model {
        Model::Affine(_) => "control-affine",
        Model::StrictFeedback(..) => "strict-feedback",
        Model::Linear(..) => "linear",
    };
    let w = match &ctx.prepared.manifold {
        Some(w) if w.is_graph() => format!(", W graph over {} chart coordinates", w.dim()),
        Some(w) => format!(", W level set with {} chart coordinates", w.dim()),
        None => String::new(),
    };
    ctx.say(format!(
        "ok: {kind} system, n = {}, m = {}{w}",
        sys.n(),
        sys.m()
    ));
    Ok(Status::Ok)
}

fn state_header(sys: &ControlAffineSystem, derived: &[&str]) -> Vec<String> {
    sys.states()
        .iter()
        .cloned()
        .chain(derived.iter().map(|s| s.to_string()))
        .collect()
}

fn stratify(ctx: &Context<'_>) -> Result<Status> {
    let sys = ctx.sys();
    let eff = &ctx.prepared.effective;
    let strat = sys.stratify(ctx.grid()?, eff.rank_tol, eff.grid_cap)?;
    let mut table = Table::new(&state_header(sys, &["corank"]));
    let mut counts = vec![0usize; sys.m() + 1];
    let mut undefined = 0;
    for label in &strat.labels {
        let cell = match label.corank {
            Some(k) => {
                counts[k] += 1;
                Cell::I(k as i64)
            }
            None => {
                undefined += 1;
                Cell::S("undefined".into())
            }
        };
        table.row(floats(&label.point).chain([cell]));
    }
    table.write(&ctx.path("stratify.csv"))?;
    let report = object([
        ("header", ctx.header()),
        ("points", Value::from(strat.labels.len())),
        ("regular_fraction", num(strat.regular_fraction)),
        ("corank_counts", Value::from(counts)),
        ("undefined", Value::from(undefined)),
    ]);
    output::write_json(&ctx.path("stratify.json"), &report)?;
    ctx.say(format!(
        "{} points, regular fraction {:.4}",
        strat.labels.len(),
        strat.regular_fraction
    ));
    Ok(Status::Ok)
}

/// Certificate summary over the points of a computed Sigma.
fn certificate(sys: &ControlAffineSystem, points: &[Vec<f64>], rank_tol: f64) -> Value {
    let mut dims = Vec::new();
    let mut failures = 0usize;
    let mut min_sv = f64::INFINITY;
    for p in points {
        match sigma::dimension_certificate(sys, p, rank_tol) {
            Ok(c) => {
                if !c.holds() {
                    failures += 1;
                }
                if let Some(s) = c.singular_values.last() {
                    min_sv = min_sv.min(*s);
                }
                dims.push(c.dimension(sys.n()));
            }
            Err(_) => failures += 1,
        }
    }
    let dimension = match dims.first() {
        Some(&d) if dims.iter().all(|&x| x == d) => Value::from(d),
        _ => Value::Null,
    };
    object([
        ("dimension", dimension),
        ("expected_dimension", Value::from(sys.m())),
        ("points_checked", Value::from(points.len())),
        ("failures", Value::from(failures)),
        ("min_singular_value", num(min_sv)),
    ])
}

fn sigma_table(sys: &ControlAffineSystem, points: &[sigma::SigmaPoint]) -> Table {
    let mut t = Table::new(&state_header(sys, &["residual_norm"]));
    for p in points {
        t.row(floats(&p.x).chain([Cell::F(p.residual_norm)]));
    }
    t
}

fn halt_name(h: &sigma::HaltReason) -> String {
    use sigma::HaltReason::*;
    match h {
        Completed => "completed".into(),
        LeftBounds => "left-bounds".into(),
        StratumBoundary { corank } => format!("stratum-boundary (corank {corank})"),
        RankDeficient => "rank-deficient".into(),
        CorrectorFailure { residual } => format!("corrector-failure (residual {residual:.3e})"),
    }
}

fn sigma_cmd(ctx: &Context<'_>) -> Result<Status> {
    let sys = ctx.sys();
    let settings = ctx.sigma_settings();
    let mut report = serde_json::Map::new();
    report.insert("header".into(), ctx.header());
    let points: Vec<sigma::SigmaPoint> = match &ctx.prepared.model {
        Model::Linear(lin, _) => {
            let ls = sigma::sigma_linear(lin, settings.rank_tol)?;
            let basis = ls.basis();
            let rows: Vec<Value> = (0..basis.nrows())
                .map(|i| nums(&basis.row(i).iter().copied().collect::<Vec<_>>()))
                .collect();
            report.insert("kind".into(), Value::from("subspace"));
            report.insert("basis".into(), Value::Array(rows));
            report.insert("degenerate".into(), Value::from(ls.degenerate));
            report.insert(
                "certificate".into(),
                object([("dimension", Value::from(ls.dimension()))]),
            );
            if ls.degenerate {
                ctx.warn(format!(
                    "non-generic system: Sigma has dimension {}",
                    ls.dimension()
                ));
            }
            let mut pts = Vec::new();
            for j in 0..basis.ncols() {
                let x: Vec<f64> = basis.column(j).iter().copied().collect();
                let frame = sigma::sigma_residual(sys, &x, settings.rank_tol)?;
                pts.push(sigma::SigmaPoint {
                    residual_norm: frame.norm(),
                    x,
                });
            }
            sigma_table(sys, &pts).write(&ctx.path("sigma.csv"))?;
            ctx.say(format!(
                "Sigma is a subspace of dimension {}",
                ls.dimension()
            ));
            output::write_json(&ctx.path("sigma.json"), &Value::Object(report))?;
            return Ok(Status::Ok);
        }
        Model::StrictFeedback(sf, _) => {
            let samples = ctx.grid()?.axis(0);
            let res = sigma::sigma_strict_feedback(sf, &samples, &settings);
            report.insert("kind".into(), Value::from("graph"));
            report.insert(
                "failures".into(),
                Value::Array(
                    res.failures
                        .iter()
                        .map(|f| {
                            object([("x1", num(f.x1)), ("reason", Value::from(f.reason.clone()))])
                        })
                        .collect(),
                ),
            );
            res.set.points
        }
        Model::Affine(_) => {
            let grid = ctx.grid()?;
            let scan =
                sigma::sigma_grid_scan(sys, grid, &settings, ctx.prepared.effective.grid_cap)?;
            for w in &scan.warnings {
                ctx.warn(w);
            }
            report.insert("kind".into(), Value::from("cloud"));
            report.insert(
                "scan".into(),
                object([
                    ("seeds", Value::from(scan.seeds)),
                    ("converged", Value::from(scan.converged)),
                    ("failed", Value::from(scan.failed)),
                    ("stratum_skipped", Value::from(scan.stratum_skipped)),
                    ("already_on_sigma", Value::from(scan.already_on_sigma)),
                    (
                        "certificate_failures",
                        Value::from(scan.certificate_failures),
                    ),
                ]),
            );
            if sys.m() == 1 && sys.n() >= 2 && !scan.set.is_empty() {
                let center = grid.center();
                let start = scan
                    .set
                    .points
                    .iter()
                    .min_by(|a, b| {
                        crate::linalg::euclid(&a.x, &center)
                            .total_cmp(&crate::linalg::euclid(&b.x, &center))
                    })
                    .expect("nonempty cloud");
                let mut cont = ContinuationSettings::for_box(grid);
                if let Some(h) = ctx.prepared.effective.arc_step {
                    cont.arc_step = h;
                    cont.n_steps = (4.0 * grid.diameter() / h).ceil() as usize;
                }
                match sigma::sigma_continuation(sys, &start.x, &cont, &settings) {
                    Ok(curve) => {
                        sigma_table(sys, &curve.set.points).write(&ctx.path("sigma_curve.csv"))?;
                        report.insert(
                            "curve".into(),
                            object([
                                ("points", Value::from(curve.set.len())),
                                ("arc_step", num(cont.arc_step)),
                                ("forward_halt", Value::from(halt_name(&curve.forward_halt))),
                                (
                                    "backward_halt",
                                    curve
                                        .backward_halt
                                        .as_ref()
                                        .map_or(Value::Null, |h| Value::from(halt_name(h))),
                                ),
                                ("halvings", Value::from(curve.halvings)),
                            ]),
                        );
                    }
                    Err(e) => ctx.warn(format!("continuation skipped: {e}")),
                }
            }
            scan.set.points
        }
    };
    let xs: Vec<Vec<f64>> = points.iter().map(|p| p.x.clone()).collect();
    report.insert("points".into(), Value::from(points.len()));
    report.insert(
        "certificate".into(),
        certificate(sys, &xs, settings.rank_tol),
    );
    sigma_table(sys, &points).write(&ctx.path("sigma.csv"))?;
    output::write_json(&ctx.path("sigma.json"), &Value::Object(report))?;
    if points.is_empty() {
        ctx.warn("no points of Sigma found");
    }
    ctx.say(format!("{} points of Sigma", points.len()));
    Ok(Status::Ok)
}

fn eigen_json(e: &[num_complex::Complex64]) -> Value {
    Value::Array(
        e.iter()
            .map(|z| object([("re", num(z.re)), ("im", num(z.im))]))
            .collect(),
    )
}

fn transverse_cmd(ctx: &Context<'_>) -> Result<Status> {
    let sys = ctx.sys();
    let w = ctx.manifold()?;
    let seeds = ctx.seed_points()?;
    let rank_tol = ctx.prepared.effective.rank_tol;

    // Margins at the distinct chart points of the seed grid.
    let mut charts: Vec<Vec<f64>> = seeds.iter().map(|s| w.chart(s)).collect();
    charts.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    charts.dedup();
    let mut min_margin = f64::INFINITY;
    let mut max_condition: f64 = 0.0;
    let mut not_transverse = 0usize;
    let mut failed = 0usize;
    let mut worst: Option<Vec<f64>> = None;
    for y in &charts {
        let t = w.lift(y).and_then(|p| {
            Ok((
                transverse::transversality_to_d(w, sys, &p, TRANSVERSALITY_TOL)?,
                p,
            ))
        });
        match t {
            Ok((t, p)) => {
                if !t.transverse {
                    not_transverse += 1;
                }
                if t.margin < min_margin {
                    min_margin = t.margin;
                    worst = Some(p);
                }
                max_condition = max_condition.max(t.condition);
            }
            Err(_) => failed += 1,
        }
    }
    let margins = object([
        ("points", Value::from(charts.len())),
        ("min_margin", num(min_margin)),
        ("argmin", worst.as_deref().map_or(Value::Null, nums)),
        ("max_condition", num(max_condition)),
        ("not_transverse", Value::from(not_transverse)),
        ("failed", Value::from(failed)),
    ]);

    let search = transverse::find_equilibria(w, sys, &seeds, &ctx.equilibrium_settings())?;
    let equilibria: Vec<Value> = search
        .equilibria
        .iter()
        .map(|e| {
            let sm =
                transverse::transversality_to_sigma(w, sys, &e.point, TRANSVERSALITY_TOL, rank_tol)
                    .map_or(Value::Null, |t| num(t.margin));
            object([
                ("point", nums(&e.point)),
                ("chart_point", nums(&e.chart_point)),
                ("eigenvalues", eigen_json(&e.eigenvalues)),
                ("index", Value::from(e.index)),
                ("isolated", Value::from(e.isolated)),
                ("condition", num(e.condition)),
                ("residual", num(e.residual)),
                ("sigma_margin", sm),
            ])
        })
        .collect();
    let report = object([
        ("header", ctx.header()),
        ("margins", margins),
        ("equilibria", Value::Array(equilibria)),
        ("continuum", Value::from(search.continuum)),
        ("failed_seeds", Value::from(search.failures.len())),
    ]);
    output::write_json(&ctx.path("transverse.json"), &report)?;
    if not_transverse > 0 {
        ctx.warn(format!(
            "W is not transverse to D at {not_transverse} of {} sampled points",
            charts.len()
        ));
    }
    if search.continuum {
        ctx.warn("non-isolated equilibria: W meets Sigma non-transversally");
    }
    ctx.say(format!(
        "min margin {:.3e}, {} equilibria",
        min_margin,
        search.equilibria.len()
    ));
    Ok(Status::Ok)
}

fn design_cmd(ctx: &Context<'_>) -> Result<Status> {
    let sys = ctx.sys();
    let w = ctx.manifold()?;
    let eff = &ctx.prepared.effective;
    let x0 = ctx
        .prepared
        .x0
        .as_ref()
        .ok_or_else(|| Error::Config("`design` needs [solver].x0".into()))?;
    let law = design::synthesize_invariance_feedback(w, sys, eff.lambda, TRANSVERSALITY_TOL)?;
    let settings = SimulationSettings {
        horizon: eff.horizon,
        report_dt: eff.report_dt,
        ode: OdeSettings {
            rtol: eff.rtol,
            atol: eff.atol,
            ..Default::default()
        },
        control_bounds: ctx.prepared.control_bounds.clone(),
    };
    let margin0 = law.margin(x0)?;
    let traj = design::simulate(&law, x0, &settings)?;

    let inputs: Vec<String> = (1..=sys.m()).map(|i| format!("u{i}")).collect();
    let mut derived: Vec<&str> = vec!["t"];
    derived.extend(inputs.iter().map(String::as_str));
    derived.push("distance");
    let mut table = Table::new(&state_header(sys, &derived));
    for k in 0..traj.times.len() {
        table.row(
            floats(&traj.states[k])
                .chain([Cell::F(traj.times[k])])
                .chain(floats(&traj.controls[k]))
                .chain([Cell::F(traj.distance[k])]),
        );
    }
    table.write(&ctx.path("trajectory.csv"))?;

    let violations: Vec<Value> = traj
        .violations
        .iter()
        .map(|v| {
            object([
                ("time", num(v.time)),
                ("input", Value::from(v.input + 1)),
                ("value", num(v.value)),
            ])
        })
        .collect();
    let report = object([
        ("header", ctx.header()),
        ("lambda", num(law.lambda())),
        ("x0", nums(x0)),
        ("gs_margin_x0", num(margin0)),
        (
            "initial_distance",
            num(traj.distance.first().copied().unwrap_or(f64::NAN)),
        ),
        (
            "final_distance",
            num(traj.distance.last().copied().unwrap_or(f64::NAN)),
        ),
        ("max_distance", num(traj.max_distance())),
        (
            "fitted_decay_rate",
            traj.fitted_decay_rate(DECAY_FLOOR).map_or(Value::Null, num),
        ),
        ("accepted_steps", Value::from(traj.accepted_steps)),
        ("rejected_steps", Value::from(traj.rejected_steps)),
        ("violations", Value::Array(violations)),
        (
            "truncated",
            traj.truncated.clone().map_or(Value::Null, Value::from),
        ),
    ]);
    output::write_json(&ctx.path("design.json"), &report)?;
    if !traj.violations.is_empty() {
        ctx.warn(format!(
            "{} control bound violations",
            traj.violations.len()
        ));
    }
    if let Some(why) = &traj.truncated {
        return Ok(Status::Numerical(format!("simulation truncated: {why}")));
    }
    ctx.say(format!(
        "simulated to t = {}, final |s| = {:.3e}",
        traj.times.last().copied().unwrap_or(0.0),
        traj.distance.last().copied().unwrap_or(f64::NAN)
    ));
    Ok(Status::Ok)
}

fn bifurcate(ctx: &Context<'_>) -> Result<Status> {
    let sys = ctx.sys();
    let w = ctx.manifold()?;
    let range = ctx.prepared.effective.mu_range.ok_or_else(|| {
        Error::Config("`bifurcate` needs [manifold].mu_range or --mu-range".into())
    })?;
    let seeds = ctx.seed_points()?;
    let settings = BifurcationSettings {
        equilibria: ctx.equilibrium_settings(),
        transversality_tol: TRANSVERSALITY_TOL,
        ..Default::default()
    };
    let diagram = design::trace_bifurcation(w, sys, &range.values(), &seeds, &settings)?;

    let mut table = Table::new(&state_header(
        sys,
        &[
            "mu",
            "branch",
            "index",
            "isolated",
            "leading_re",
            "leading_im",
        ],
    ));
    for sample in &diagram.samples {
        for (e, b) in sample.equilibria.iter().zip(&sample.branches) {
            let lead = e.leading_eigenvalue().unwrap_or_default();
            table.row(floats(&e.point).chain([
                Cell::F(sample.mu),
                Cell::I(*b as i64),
                Cell::I(e.index as i64),
                Cell::I(e.isolated as i64),
                Cell::F(lead.re),
                Cell::F(lead.im),
            ]));
        }
    }
    table.write(&ctx.path("bifurcation.csv"))?;

    let events: Vec<Value> = diagram
        .events
        .iter()
        .map(|ev| {
            object([
                ("mu", num(ev.mu)),
                ("type", Value::from(ev.kind.name())),
                ("point", nums(&ev.point)),
                (
                    "eigenvalue",
                    object([("re", num(ev.eigenvalue.re)), ("im", num(ev.eigenvalue.im))]),
                ),
                ("bracket", num(ev.bracket)),
                ("certified", Value::from(ev.certified)),
                ("sigma_margin", ev.sigma_margin.map_or(Value::Null, num)),
            ])
        })
        .collect();
    let continuum: Vec<Value> = diagram
        .samples
        .iter()
        .filter(|s| s.continuum)
        .map(|s| num(s.mu))
        .collect();
    let report = object([
        ("header", ctx.header()),
        ("events", Value::Array(events)),
        ("branch_count", Value::from(diagram.branch_count)),
        ("continuum_mu", Value::Array(continuum)),
        ("diagnostics", Value::from(diagram.diagnostics.clone())),
    ]);
    output::write_json(&ctx.path("events.json"), &report)?;
    for d in &diagram.diagnostics {
        ctx.warn(d);
    }
    ctx.say(format!(
        "{} samples, {} branches, {} events",
        diagram.samples.len(),
        diagram.branch_count,
        diagram.events.len()
    ));
    Ok(Status::Ok)
}

//! Batch commands behind the `pa-quit` binary.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::error::{Error, Result};
use crate::hjb::{FlagSummary, SolverGrid, ValueSurface};
use crate::io::{self, RunHeader, SurfaceTable};
use crate::market::{MarketEnvironment, ValidationReport};
use crate::policy::{extract_policy, PolicyField};
use crate::recursion::{self, ConvergenceReport, SurfaceFamily};
use crate::scenarios::{self, QuitGainExample};
use crate::sim::{ChainSimulator, DppReport, Start, ValueEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    SolveU0,
    Solve,
    Simulate,
    DppCheck,
    ExampleQuitGain,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::SolveU0 => "solve-u0",
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::DppCheck => "dpp-check",
            Command::ExampleQuitGain => "example-quit-gain",
            Command::Report => "report",
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub refine: u32,
    pub workers: Option<usize>,
    pub market_drop: Option<f64>,
    pub payment_cap: Option<f64>,
}

/// Machine-readable result of a command, also written as `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub config_sha256: String,
    pub refine: u32,
    pub files: Vec<String>,
    pub passed: bool,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct U0Summary {
    pub theta: f64,
    pub x_min: f64,
    pub value_at_ir: f64,
    pub upper_residual: f64,
    pub terminal_residual: f64,
    pub monotonicity_defect: f64,
    pub howard_iterations: usize,
    pub flags: FlagSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateSummary {
    pub theta: f64,
    pub t: f64,
    pub x: f64,
    pub pde_value: f64,
    pub estimate: ValueEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuitGainSummary {
    pub payment_cap: f64,
    pub market_drop: f64,
    pub x0: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub lower_bound: f64,
    pub u0: f64,
    pub u1: f64,
    pub bound_holds: bool,
    pub gain_holds: bool,
}

struct Ctx {
    cfg: RunConfig,
    env: MarketEnvironment,
    grid: SolverGrid,
    steps: usize,
    refine: u32,
    out: PathBuf,
    files: Vec<String>,
}

impl Ctx {
    fn header(&self, command: Command, flags: &FlagSummary, sim: bool) -> Vec<String> {
        RunHeader::new(command.name(), &self.cfg.hash(), &self.grid, sim.then_some(self.steps), flags).lines()
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        io::write_file(&self.out, name, contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, contents: impl FnOnce() -> String) -> Result<()> {
        if self.cfg.wants(Format::Csv) {
            self.write(name, &contents())?;
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.cfg.wants(Format::Json) {
            self.write(name, &io::to_json(value)?)?;
        }
        Ok(())
    }

    fn solve(&self) -> Result<(SurfaceFamily, ConvergenceReport)> {
        recursion::fixed_point(&self.env, &self.grid, self.cfg.solver.tol, self.cfg.solver.n_max)
    }

    fn start_thetas(&self) -> Vec<f64> {
        self.cfg.simulation.start_thetas.clone().unwrap_or_else(|| self.env.types.theta_values())
    }
}

fn policies(family: &SurfaceFamily, env: &MarketEnvironment) -> Result<Vec<PolicyField>> {
    family.slices.iter().map(|s| extract_policy(s, env)).collect()
}

/// Run one command. Artifacts go to the output directory; the summary is
/// also returned.
pub fn run(cfg: RunConfig, command: Command, ov: &Overrides) -> Result<RunSummary> {
    let mut cfg = cfg;
    if let Some(seed) = ov.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(w) = ov.workers {
        cfg.simulation.workers = Some(w);
    }
    let mut example = None;
    if command == Command::ExampleQuitGain {
        let cap = ov.payment_cap.unwrap_or(cfg.environment.payment_cap);
        let ex = scenarios::quit_gain_example(cap, ov.market_drop.unwrap_or(100.0))?;
        cfg = cfg.with_environment(&ex.env);
        example = Some(ex);
    } else if ov.market_drop.is_some() || ov.payment_cap.is_some() {
        return Err(Error::Config("--market-drop and --payment-cap only apply to example-quit-gain".into()));
    }
    cfg.check()?;
    let env = cfg.environment()?;
    let out = ov.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    let mut ctx = Ctx { grid: cfg.grid(ov.refine), steps: cfg.sim_steps(ov.refine), refine: ov.refine, cfg, env, out, files: Vec::new() };

    let report = ctx.env.validate();
    if command == Command::Validate {
        ctx.json("validation.json", &report)?;
        return finish(ctx, command, report.passed, serde_json::to_value(&report).unwrap_or_default(), Some(report));
    }
    if !report.passed {
        ctx.json("validation.json", &report)?;
        return Err(Error::Blocked(report));
    }

    match (command, example) {
        (Command::ExampleQuitGain, Some(ex)) => quit_gain(ctx, ex),
        (Command::SolveU0, _) => solve_u0(ctx),
        (Command::Solve, _) => solve(ctx),
        (Command::Simulate, _) => simulate(ctx),
        (Command::DppCheck, _) => dpp(ctx),
        (Command::Report, _) => report_all(ctx),
        (c, _) => Err(Error::Internal(format!("no handler for {}", c.name()))),
    }
}

fn finish(
    ctx: Ctx,
    command: Command,
    passed: bool,
    detail: serde_json::Value,
    blocked: Option<ValidationReport>,
) -> Result<RunSummary> {
    let summary = RunSummary {
        command: command.name().into(),
        config_sha256: ctx.cfg.hash(),
        refine: ctx.refine,
        files: ctx.files.iter().cloned().chain(["summary.json".to_string()]).collect(),
        passed,
        detail,
    };
    io::write_file(&ctx.out, "summary.json", &io::to_json(&summary)?)?;
    if let Some(report) = blocked.filter(|r| !r.passed) {
        return Err(Error::Blocked(report));
    }
    Ok(summary)
}

fn family_flags(slices: &[ValueSurface]) -> FlagSummary {
    let mut f = FlagSummary::default();
    slices.iter().for_each(|s| f.add(&s.flag_summary()));
    f
}

fn solve_u0(mut ctx: Ctx) -> Result<RunSummary> {
    let half = recursion::solve_u0_all(&ctx.env, &ctx.grid)?;
    let flags = family_flags(&half);
    let header = ctx.header(Command::SolveU0, &flags, false);
    ctx.csv("u0_surface.csv", || SurfaceTable::from_surfaces(header, &half).to_csv())?;
    let rows = half
        .iter()
        .map(|s| {
            let idx = ctx.env.type_index(s.theta)?;
            Ok(U0Summary {
                theta: s.theta,
                x_min: ctx.grid.x_min(&ctx.env, idx),
                value_at_ir: s.interpolate(0.0, ctx.env.ir_at(idx, 0.0))?,
                upper_residual: s.upper_residual(),
                terminal_residual: s.terminal_residual(),
                monotonicity_defect: s.monotonicity_defect(),
                howard_iterations: s.howard_iterations,
                flags: s.flag_summary(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let detail = serde_json::to_value(&rows).map_err(|e| Error::Internal(e.to_string()))?;
    finish(ctx, Command::SolveU0, true, detail, None)
}

fn write_family(ctx: &mut Ctx, command: Command, family: &SurfaceFamily, report: &ConvergenceReport) -> Result<()> {
    let header = ctx.header(command, &report.flags, false);
    ctx.csv("surface.csv", || SurfaceTable::from_surfaces(header.clone(), &family.slices).to_csv())?;
    ctx.csv("ubar.csv", || io::ubar_csv(&header, &family.times, &family.ubar))?;
    let rows: Vec<Vec<f64>> = report.deltas.iter().enumerate().map(|(n, d)| vec![(n + 1) as f64, *d]).collect();
    ctx.csv("convergence.csv", || io::table_csv(&header, &["n", "delta"], &rows))?;
    ctx.json("convergence.json", report)
}

fn solve(mut ctx: Ctx) -> Result<RunSummary> {
    let (family, report) = ctx.solve()?;
    write_family(&mut ctx, Command::Solve, &family, &report)?;
    let detail = serde_json::json!({
        "converged": report.converged,
        "iterations": report.iterations,
        "deltas": report.deltas,
        "fit": report.fit,
        "c_over_n_consistent": report.c_over_n_consistent,
        "ubar_0": family.ubar[0],
    });
    finish(ctx, Command::Solve, report.converged, detail, None)
}

fn estimates(ctx: &Ctx, family: &SurfaceFamily, fields: &[PolicyField]) -> Result<Vec<EstimateSummary>> {
    let sim = ChainSimulator::new(&ctx.env, family, fields, ctx.steps)?;
    let t = ctx.cfg.simulation.start_time;
    ctx.start_thetas()
        .into_iter()
        .map(|theta| {
            let idx = ctx.env.type_index(theta)?;
            let x = ctx.env.ir_at(idx, t);
            let m = &ctx.cfg.simulation;
            let estimate = sim.estimate_value(Start { theta, t, x }, m.n_paths, m.seed, m.workers)?;
            Ok(EstimateSummary { theta, t, x, pde_value: recursion::principal_value(family, theta, t, &ctx.env)?, estimate })
        })
        .collect()
}

fn write_estimates(ctx: &mut Ctx, command: Command, flags: &FlagSummary, est: &[EstimateSummary]) -> Result<()> {
    let header = ctx.header(command, flags, true);
    for e in est {
        let mut h = header.clone();
        h.push(format!("start: theta={} t={} x={}", e.theta, e.t, io::fmt_num(e.x)));
        h.push("rows: one chain per stream index, in order".into());
        let name = format!("chains_theta_{}.csv", e.theta);
        ctx.csv(&name, || io::chains_csv(&h, &e.estimate.records))?;
    }
    ctx.json("estimates.json", &est)
}

fn simulate(mut ctx: Ctx) -> Result<RunSummary> {
    let (family, report) = ctx.solve()?;
    let fields = policies(&family, &ctx.env)?;
    let est = estimates(&ctx, &family, &fields)?;
    write_estimates(&mut ctx, Command::Simulate, &report.flags, &est)?;
    let detail = serde_json::json!(est
        .iter()
        .map(|e| serde_json::json!({
            "theta": e.theta,
            "mean": e.estimate.mean,
            "stderr": e.estimate.stderr,
            "pde_value": e.pde_value,
            "quit_histogram": e.estimate.quit_histogram,
        }))
        .collect::<Vec<_>>());
    finish(ctx, Command::Simulate, true, detail, None)
}

fn dpp_reports(ctx: &Ctx, family: &SurfaceFamily, fields: &[PolicyField]) -> Result<Vec<DppReport>> {
    let sim = ChainSimulator::new(&ctx.env, family, fields, ctx.steps)?;
    let m = &ctx.cfg.simulation;
    ctx.start_thetas()
        .into_iter()
        .map(|theta| sim.dpp_check(theta, m.start_time, m.n_paths, m.seed, m.workers))
        .collect()
}

fn dpp(mut ctx: Ctx) -> Result<RunSummary> {
    let (family, _) = ctx.solve()?;
    let fields = policies(&family, &ctx.env)?;
    let reports = dpp_reports(&ctx, &family, &fields)?;
    ctx.json("dpp.json", &reports)?;
    let detail = serde_json::to_value(&reports).map_err(|e| Error::Internal(e.to_string()))?;
    finish(ctx, Command::DppCheck, true, detail, None)
}

fn quit_gain(mut ctx: Ctx, ex: QuitGainExample) -> Result<RunSummary> {
    let level0 = recursion::level_zero(&ctx.env, &ctx.grid)?;
    let level1 = recursion::iterate_level(&level0, &ctx.env, &ctx.grid)?;
    let u0 = level0.slice(ex.theta0)?.interpolate(0.0, ex.x0)?;
    let u1 = level1.slice(ex.theta0)?.interpolate(0.0, ex.x0)?;
    let summary = QuitGainSummary {
        payment_cap: ctx.env.payment_cap,
        market_drop: ex.market_drop,
        x0: ex.x0,
        theta0: ex.theta0,
        theta1: ex.theta1,
        lower_bound: ex.bound,
        u0,
        u1,
        bound_holds: u1 >= ex.bound,
        gain_holds: u1 > u0,
    };
    let flags = level1.flag_summary();
    let header = ctx.header(Command::ExampleQuitGain, &flags, false);
    ctx.csv("surface.csv", || SurfaceTable::from_surfaces(header.clone(), &level1.slices).to_csv())?;
    ctx.csv("ubar.csv", || io::ubar_csv(&header, &level0.times, &level0.ubar))?;
    ctx.json("quit_gain.json", &summary)?;
    let passed = summary.bound_holds && summary.gain_holds;
    let detail = serde_json::to_value(&summary).map_err(|e| Error::Internal(e.to_string()))?;
    finish(ctx, Command::ExampleQuitGain, passed, detail, None)
}

fn report_all(mut ctx: Ctx) -> Result<RunSummary> {
    let (family, report) = ctx.solve()?;
    write_family(&mut ctx, Command::Report, &family, &report)?;
    let fields = policies(&family, &ctx.env)?;
    let est = estimates(&ctx, &family, &fields)?;
    write_estimates(&mut ctx, Command::Report, &report.flags, &est)?;
    let dpp = dpp_reports(&ctx, &family, &fields)?;
    ctx.json("dpp.json", &dpp)?;

    let header = ctx.header(Command::Report, &report.flags, true);
    let mut tail_rows = Vec::new();
    for e in &est {
        for n in 1..e.estimate.quit_histogram.len() {
            let p = e.estimate.tail(n);
            tail_rows.push(vec![e.theta, n as f64, p, n as f64 * p]);
        }
    }
    ctx.csv("quit_tail.csv", || io::table_csv(&header, &["theta", "n", "tail", "n_times_tail"], &tail_rows))?;

    let mut text = String::new();
    let _ = writeln!(text, "pa-quit report");
    for l in &header {
        let _ = writeln!(text, "  {l}");
    }
    let _ = writeln!(text, "\nfixed point");
    let _ = writeln!(text, "  converged: {} after {} level(s)", report.converged, report.iterations);
    for (n, d) in report.deltas.iter().enumerate() {
        let _ = writeln!(text, "  delta[{}] = {}", n + 1, io::fmt_num(*d));
    }
    if let Some(fit) = report.fit {
        let _ = writeln!(text, "  decay fit a/n^b: a = {:.4e}, b = {:.3}", fit.a, fit.b);
    }
    let _ = writeln!(text, "  re-hiring value at t=0: {}", io::fmt_num(family.ubar[0]));
    let _ = writeln!(text, "\nprincipal value at the start");
    for e in &est {
        let _ = writeln!(
            text,
            "  theta={}: pde {:.6}  mc {:.6} +- {:.6}  quits {:?}",
            e.theta, e.pde_value, e.estimate.mean, e.estimate.stderr, e.estimate.quit_histogram
        );
    }
    let _ = writeln!(text, "\ndynamic programming check");
    for d in &dpp {
        let _ = writeln!(text, "  theta={}: residual {:.6} (stderr {:.6}, quit fraction {:.4})", d.theta, d.residual, d.stderr, d.quit_fraction);
    }
    ctx.write("report.txt", &text)?;
    let detail = serde_json::json!({ "converged": report.converged, "iterations": report.iterations });
    finish(ctx, Command::Report, report.converged, detail, None)
}

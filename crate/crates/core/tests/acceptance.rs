//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs as a plain binary (`harness = false`) so the lines are
//! always printed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pa_quit::agent::agent_value_backward;
use pa_quit::config::RunConfig;
use pa_quit::hjb::{self, hamiltonian, reduced_hamiltonian, ControlBounds, SolverGrid, ValueSurface};
use pa_quit::market::{AgentType, AgentTypeSet, MarketEnvironment, PiecewiseLinear};
use pa_quit::policy::{extract_policy, PolicyField};
use pa_quit::recursion::{self, principal_value, sup_distance, SurfaceFamily};
use pa_quit::run::{self, Command, Overrides};
use pa_quit::scenarios;
use pa_quit::sim::{ChainSimulator, Start};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Grid with the config's settings and `n_time = n`, `n_space = n + 1`.
fn sized(cfg: &RunConfig, n: usize) -> SolverGrid {
    let mut g = cfg.grid(0);
    g.n_time = n;
    g.n_space = n + 1;
    g
}

struct Solved {
    grid: SolverGrid,
    family: SurfaceFamily,
    converged: bool,
    iterations: usize,
    b: Option<f64>,
    policies: Vec<PolicyField>,
}

fn solve(env: &MarketEnvironment, grid: &SolverGrid, tol: f64, n_max: usize) -> Solved {
    let (family, report) = recursion::fixed_point(env, grid, tol, n_max).expect("fixed point");
    let policies = family.slices.iter().map(|s| extract_policy(s, env).expect("policy")).collect();
    Solved {
        grid: grid.clone(),
        converged: report.converged,
        iterations: report.iterations,
        b: report.fit.map(|f| f.b),
        family,
        policies,
    }
}

/// Principal value at `(θ, t, Rᶿ_t)` for every type.
fn start_values(env: &MarketEnvironment, s: &Solved, t: f64) -> Vec<f64> {
    env.types.theta_values().iter().map(|&th| principal_value(&s.family, th, t, env).unwrap()).collect()
}

/// Richardson-style bias bound of the coarser of two solutions, `2|V_h − V_{h/2}|`.
fn bias(coarse: &[f64], fine: &[f64]) -> f64 {
    2.0 * sup_distance(coarse, fine)
}

/// `ū` of the finer family sampled on the coarser time grid.
fn ubar_on_coarse(coarse: &SurfaceFamily, fine: &SurfaceFamily) -> Vec<f64> {
    let stride = (fine.times.len() - 1) / (coarse.times.len() - 1);
    (0..coarse.times.len()).map(|k| fine.ubar[k * stride]).collect()
}

struct Baseline {
    cfg: RunConfig,
    env: MarketEnvironment,
    /// Grids of 100, 200 and 400 steps.
    levels: Vec<Solved>,
}

fn criterion_1(surfaces: &[(String, &ValueSurface)]) -> Outcome {
    let mut worst = (0.0f64, String::new());
    for (name, s) in surfaces {
        let r = s.upper_residual().max(s.terminal_residual());
        if r > worst.0 || worst.1.is_empty() {
            worst = (r, name.clone());
        }
    }
    outcome(worst.0 == 0.0, format!("{} surfaces, largest residual {:e} ({})", surfaces.len(), worst.0, worst.1))
}

fn growth_envelope(u: &ValueSurface, lambda: f64) -> (f64, f64, bool) {
    let n_t = u.n_time();
    let dt = u.dt();
    let mut min_slack = f64::INFINITY;
    let mut c_fit = 0.0f64;
    let mut finite = true;
    for k in 0..n_t {
        let tau = u.horizon - u.times[k];
        let dx = u.spacing(k);
        for i in 1..u.n_space - 1 {
            let x = u.x(k, i);
            let v = u.value(k, i);
            finite &= v.is_finite();
            let lower = tau / lambda * (-x / (tau * lambda)).ln();
            min_slack = min_slack.min(v - (lower - 10.0 * (dx + dt)));
            c_fit = c_fit.max(v / ((-x * tau).sqrt() + tau));
        }
    }
    (min_slack, c_fit, finite)
}

fn criterion_2(b: &Baseline) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut fits: Vec<Vec<f64>> = Vec::new();
    for s in &b.levels[1..] {
        let mut per_type = Vec::new();
        for (idx, ty) in b.env.types.iter().enumerate() {
            let u = hjb::solve_u0(&b.env, ty.theta, &s.grid).unwrap();
            let (slack, c, finite) = growth_envelope(&u, b.env.lambda(idx));
            ok &= slack >= 0.0 && finite && c.is_finite();
            parts.push(format!("n={} θ={}: slack {:.3e} C {:.4}", s.grid.n_time, ty.theta, slack, c));
            per_type.push(c);
        }
        fits.push(per_type);
    }
    let drift = fits[0].iter().zip(&fits[1]).map(|(a, c)| (c / a - 1.0).abs()).fold(0.0, f64::max);
    ok &= drift <= 0.2;
    outcome(ok, format!("{}; envelope drift {:.1}%", parts.join(", "), 100.0 * drift))
}

fn criterion_3(surfaces: &[(String, &ValueSurface)]) -> Outcome {
    let mut worst = (0.0f64, String::new());
    for (name, s) in surfaces {
        let d = s.monotonicity_defect();
        if d > worst.0 || worst.1.is_empty() {
            worst = (d, name.clone());
        }
    }
    outcome(worst.0 <= 1e-8, format!("{} surfaces, largest defect {:.3e} ({})", surfaces.len(), worst.0, worst.1))
}

const ETA_LO: f64 = -40.0;
const Z_HI: f64 = 40.0;

/// Grid maximum of the separable objective: one sweep over `η`, one over `z`.
fn brute_hamiltonian(theta: f64, lambda: f64, cap: f64, p: f64, q: f64, n: usize) -> (f64, f64) {
    let d_eta = (cap - ETA_LO) / n as f64;
    let d_z = Z_HI / n as f64;
    let mut best_eta = f64::NEG_INFINITY;
    let mut best_z = f64::NEG_INFINITY;
    for j in 0..=n {
        let eta = ETA_LO + j as f64 * d_eta;
        best_eta = best_eta.max(lambda * (-lambda * eta).exp() * p - eta);
        let z = j as f64 * d_z;
        best_z = best_z.max(0.5 * z * z * (q + theta * p) + theta * z);
    }
    (best_eta + best_z, d_eta.max(d_z))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cap = 1.0;
    let (eta_lo, z_hi, n) = (ETA_LO, Z_HI, 200_000);
    let mut worst_ratio = 0.0f64;
    let mut ok = true;
    for _ in 0..1000 {
        let theta = rng.random_range(0.2..3.0);
        let lambda = rng.random_range(0.3..3.0);
        let p = -rng.random_range(0.05..5.0);
        let a = -rng.random_range(0.1..5.0);
        let q = a - theta * p;
        let closed = reduced_hamiltonian(theta, lambda, cap, p, q).expect("sampled inside the regular region");
        let wide = ControlBounds { eta_min: eta_lo, eta_max: cap, z_max: z_hi };
        let via_controls = hamiltonian(theta, lambda, &wide, p, q).value;
        let (brute, res) = brute_hamiltonian(theta, lambda, cap, p, q, n);
        let allowed = res * (1.0 + p.abs() + q.abs());
        let gap = (closed - brute).abs().max((via_controls - brute).abs());
        ok &= gap <= allowed && closed >= brute - 1e-12;
        worst_ratio = worst_ratio.max(gap / allowed);
    }
    let wide = ControlBounds { eta_min: eta_lo, eta_max: cap, z_max: z_hi };
    let h1 = hamiltonian(1.0, 1.0, &wide, -1.0, -1.0).value;
    let h2 = hamiltonian(1.0, 1.0, &wide, -3.0, -1.0).value;
    let round4 = |v: f64| (v * 1e4).round() / 1e4;
    ok &= round4(h1) == -0.75 && round4(h2) == -1.9786;
    outcome(ok, format!("worst gap / allowance {worst_ratio:.3e}; worked examples {h1:.5} and {h2:.5}"))
}

fn single_type_env(ir: PiecewiseLinear, quit_cost: PiecewiseLinear) -> MarketEnvironment {
    let ty = AgentType { theta: 1.0, lambda: 1.0, ir, quit_cost };
    MarketEnvironment::new(AgentTypeSet::new(vec![ty]).unwrap(), 1.0, 1.0, PiecewiseLinear::constant(0.0, 1.0), None, None, 200)
        .unwrap()
}

fn criterion_5() -> Outcome {
    let n = 200;
    let mut parts = Vec::new();

    // Case 1: paying the cap throughout keeps the agent on the upper barrier.
    let env = scenarios::baseline_single();
    let cap = env.payment_cap;
    let a = agent_value_backward(&env, 1.0, |_| cap, n).unwrap();
    let err1 = a.times.iter().zip(&a.y).map(|(&t, &y)| (y - env.upper_barrier(1.0, t).unwrap()).abs()).fold(0.0, f64::max);
    let ok1 = err1 <= 1e-12 && a.quit_time == env.horizon;
    parts.push(format!("cap contract max |Y − L̄| {err1:.1e}, τ = {}", a.quit_time));

    // Case 2: the constant rate that carries x = −0.5 to zero at T.
    let x = -0.5f64;
    let eta = -(-x).ln();
    let env = single_type_env(
        PiecewiseLinear::new(vec![(0.0, -0.55), (1.0, 0.0)]).unwrap(),
        PiecewiseLinear::new(vec![(0.0, 0.05), (1.0, 0.0)]).unwrap(),
    );
    let a = agent_value_backward(&env, 1.0, |_| eta, n).unwrap();
    let err2 = a.times.iter().zip(&a.y).map(|(&t, &y)| (y - x * (1.0 - t)).abs()).fold(0.0, f64::max);
    let ok2 = (a.y[0] - x).abs() <= 1e-12 && err2 <= 1e-12 && a.quit_time == env.horizon;
    parts.push(format!("Y_0 = {:.15}, τ = {}", a.y[0], a.quit_time));

    // Case 3: a payment collapse at ½ drives the agent onto the obstacle.
    let env = scenarios::baseline_single();
    let pay = |t: f64| if t < 0.5 { cap } else { -5.0 };
    let coarse = agent_value_backward(&env, 1.0, pay, n).unwrap();
    let fine = agent_value_backward(&env, 1.0, pay, 10 * n).unwrap();
    let err3 = coarse.y.iter().enumerate().map(|(k, &y)| (y - fine.y[10 * k]).abs()).fold(0.0, f64::max);
    let quits = coarse.quit_time < env.horizon;
    let ok3 = err3 <= 1e-6 && quits;
    parts.push(format!("obstacle case refinement gap {err3:.1e}, τ = {:.3}", coarse.quit_time));

    outcome(ok1 && ok2 && ok3, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let env = scenarios::baseline_single();
    let grid = SolverGrid::new(200, 201);
    let level0 = recursion::level_zero(&env, &grid).unwrap();
    let level1 = recursion::iterate_level(&level0, &env, &grid).unwrap();
    let (u0, u1) = (&level0.slices[0], &level1.slices[0]);
    let excess = u1.values.iter().zip(&u0.values).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);

    let cheap = env.with_scaled_quit_costs(1e-3);
    let c0 = recursion::level_zero(&cheap, &grid).unwrap();
    let c1 = recursion::iterate_level(&c0, &cheap, &grid).unwrap();
    let (v0, v1) = (&c0.slices[0], &c1.slices[0]);
    let dt = v0.dt();
    let mut slack = f64::INFINITY;
    for k in 0..=v0.n_time() {
        let allow = 5.0 * (v0.spacing(k) + dt);
        for i in 0..v0.n_space {
            slack = slack.min(v1.value(k, i) - v0.value(k, i) + allow);
        }
    }
    outcome(
        excess <= 1e-6 && slack >= 0.0,
        format!("max(u₁ − u₀) = {excess:.3e}; cheap quitting min slack {slack:.3e}"),
    )
}

fn criterion_7() -> Outcome {
    let cfg = config("quit_gain.toml");
    let grid = cfg.grid(0);
    let mut gaps = Vec::new();
    let mut ok = true;
    let mut parts = Vec::new();
    for drop in [100.0, 1000.0] {
        let ex = scenarios::quit_gain_example(1.0, drop).unwrap();
        let level0 = recursion::level_zero(&ex.env, &grid).unwrap();
        let level1 = recursion::iterate_level(&level0, &ex.env, &grid).unwrap();
        let u0 = level0.slice(ex.theta0).unwrap().interpolate(0.0, ex.x0).unwrap();
        let u1 = level1.slice(ex.theta0).unwrap().interpolate(0.0, ex.x0).unwrap();
        let s = level1.slice(ex.theta0).unwrap();
        let tol = s.spacing(0) + s.dt();
        if drop == 100.0 {
            ok &= u1 >= 1.80993 - tol && u1 > u0;
        }
        gaps.push(u1 - u0);
        parts.push(format!("n={drop}: u₁ {u1:.4} u₀ {u0:.4} bound {:.5}", ex.bound));
    }
    ok &= gaps[1] > gaps[0];
    outcome(ok, format!("{}; gap {:.4} -> {:.4}", parts.join(", "), gaps[0], gaps[1]))
}

fn criterion_8(b: &Baseline) -> Outcome {
    let s = &b.levels[1];
    let fit = s.b.unwrap_or(f64::NAN);
    let mut ok = s.converged && s.iterations <= b.cfg.solver.n_max && fit >= 1.0;
    let d_coarse = sup_distance(&b.levels[0].family.ubar, &ubar_on_coarse(&b.levels[0].family, &s.family));
    let d_fine = sup_distance(&s.family.ubar, &ubar_on_coarse(&s.family, &b.levels[2].family));
    ok &= d_coarse <= 2.0 * d_fine;
    outcome(
        ok,
        format!(
            "{} levels to tol {:e}, decay exponent {fit:.2}; ū change 100→200 {d_coarse:.3e}, 200→400 {d_fine:.3e}",
            s.iterations, b.cfg.solver.tol
        ),
    )
}

struct McCheck {
    passed: bool,
    line: String,
}

fn mc_check(env: &MarketEnvironment, s: &Solved, steps: usize, n_paths: usize, seed: u64, bias: f64) -> McCheck {
    let sim = ChainSimulator::new(env, &s.family, &s.policies, steps).unwrap();
    let mut passed = true;
    let mut line = Vec::new();
    for (idx, ty) in env.types.iter().enumerate() {
        let start = Start { theta: ty.theta, t: 0.0, x: env.ir_at(idx, 0.0) };
        let est = sim.estimate_value(start, n_paths, seed, None).unwrap();
        let pde = principal_value(&s.family, ty.theta, 0.0, env).unwrap();
        let diff = (est.mean - pde).abs();
        passed &= diff <= 3.0 * est.stderr + bias;
        line.push(format!("θ={}: |{:.4}−{:.4}| = {diff:.4}", ty.theta, est.mean, pde));
    }
    McCheck { passed, line: line.join(" ") }
}

fn criterion_9(b: &Baseline) -> Outcome {
    let v: Vec<Vec<f64>> = b.levels.iter().map(|s| start_values(&b.env, s, 0.0)).collect();
    let bias_100 = bias(&v[0], &v[1]);
    let bias_200 = bias(&v[1], &v[2]);
    let ratio = bias_200 / bias_100;
    let m = &b.cfg.simulation;
    let mut ok = (0.35..=0.65).contains(&ratio);
    let mut parts = vec![format!("bias {bias_100:.4} -> {bias_200:.4} (ratio {ratio:.2})")];
    for (s, bias) in [(&b.levels[0], bias_100), (&b.levels[1], bias_200)] {
        let clock = Instant::now();
        let steps = s.grid.n_time;
        let c = mc_check(&b.env, s, steps, m.n_paths, m.seed, bias);
        let secs = clock.elapsed().as_secs_f64();
        ok &= c.passed && secs < 60.0;
        parts.push(format!("n={}: {} [{secs:.1}s]", steps, c.line));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_10() -> Outcome {
    let cfg = config("low_cost.toml");
    let env = cfg.environment().unwrap();
    let s = solve(&env, &cfg.grid(0), cfg.solver.tol, cfg.solver.n_max);
    let sim = ChainSimulator::new(&env, &s.family, &s.policies, cfg.sim_steps(0)).unwrap();
    let start = Start { theta: env.theta(0), t: 0.0, x: env.ir_at(0, 0.0) };
    let mut consts = Vec::new();
    let mut parts = Vec::new();
    let mut ok = s.converged;
    for n_paths in [cfg.simulation.n_paths, 2 * cfg.simulation.n_paths] {
        let est = sim.estimate_value(start, n_paths, cfg.simulation.seed, None).unwrap();
        let scaled: Vec<f64> = (1..=8).map(|n| n as f64 * est.tail(n)).collect();
        let c = scaled.iter().copied().fold(0.0, f64::max);
        ok &= est.tail(2) > 0.0 && c.is_finite();
        parts.push(format!(
            "{n_paths} paths: n·P(≥n) = [{}]",
            scaled.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", ")
        ));
        consts.push(c);
    }
    let drift = (consts[1] / consts[0] - 1.0).abs();
    ok &= drift <= 0.5;
    outcome(ok, format!("{}; Ĉ {:.3} -> {:.3}", parts.join("; "), consts[0], consts[1]))
}

fn dpp_line(env: &MarketEnvironment, s: &Solved, steps: usize, n_paths: usize, seed: u64, bias: f64) -> (bool, String) {
    let sim = ChainSimulator::new(env, &s.family, &s.policies, steps).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for ty in env.types.iter() {
        let r = sim.dpp_check(ty.theta, 0.0, n_paths, seed, None).unwrap();
        ok &= r.residual <= 3.0 * r.stderr + bias;
        parts.push(format!("θ={}: {:.4}±{:.4}", ty.theta, r.residual, r.stderr));
    }
    (ok, parts.join(" "))
}

fn criterion_11(b: &Baseline) -> Outcome {
    let m = &b.cfg.simulation;
    let v: Vec<Vec<f64>> = b.levels.iter().map(|s| start_values(&b.env, s, 0.0)).collect();
    let base_bias = bias(&v[1], &v[2]);
    let (ok_base, base) = dpp_line(&b.env, &b.levels[1], b.levels[1].grid.n_time, m.n_paths, m.seed, base_bias);

    let cfg = config("quit_gain.toml");
    let ex = scenarios::quit_gain_example(1.0, 100.0).unwrap();
    let solved: Vec<Solved> =
        [0, 1].iter().map(|&r| solve(&ex.env, &cfg.grid(r), cfg.solver.tol, cfg.solver.n_max)).collect();
    let vx: Vec<Vec<f64>> = solved.iter().map(|s| start_values(&ex.env, s, 0.0)).collect();
    let ex_bias = bias(&vx[0], &vx[1]);
    let (ok_ex, exl) = dpp_line(&ex.env, &solved[0], cfg.sim_steps(0), cfg.simulation.n_paths, cfg.simulation.seed, ex_bias);
    outcome(
        ok_base && ok_ex,
        format!("baseline (bias {base_bias:.4}) {base}; market drop (bias {ex_bias:.4}) {exl}"),
    )
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
    }
    files
}

fn criterion_12() -> Outcome {
    let mut cfg = config("baseline.toml");
    cfg.solver.n_time = 40;
    cfg.solver.n_space = 41;
    cfg.simulation.n_paths = 400;
    cfg.simulation.steps = 40;
    let root = tempfile::tempdir().unwrap();
    let commands = [
        Command::Validate,
        Command::SolveU0,
        Command::Solve,
        Command::Simulate,
        Command::DppCheck,
        Command::ExampleQuitGain,
        Command::Report,
    ];
    let mut ok = true;
    let mut compared = 0;
    for command in commands {
        let mut trees = Vec::new();
        for workers in [1usize, 4, 8] {
            let out = root.path().join(format!("{}-{workers}", command.name()));
            let ov = Overrides { out: Some(out.clone()), workers: Some(workers), ..Default::default() };
            run::run(cfg.clone(), command, &ov).unwrap();
            trees.push(read_tree(&out));
        }
        ok &= trees[1] == trees[0] && trees[2] == trees[0] && !trees[0].is_empty();
        compared += trees[0].len();
    }
    outcome(ok, format!("{} commands, {compared} artifacts identical across 1, 4 and 8 workers", commands.len()))
}

fn main() {
    let clock = Instant::now();
    let cfg = config("baseline.toml");
    let env = cfg.environment().unwrap();
    let levels = [100, 200, 400].iter().map(|&n| solve(&env, &sized(&cfg, n), cfg.solver.tol, cfg.solver.n_max)).collect();
    let base = Baseline { cfg, env, levels };

    let single = scenarios::baseline_single();
    let single_grid = SolverGrid::new(200, 201);
    let half = hjb::solve_u0(&single, 1.0, &single_grid).unwrap();
    let l0 = recursion::level_zero(&single, &single_grid).unwrap();
    let l1 = recursion::iterate_level(&l0, &single, &single_grid).unwrap();
    let mut surfaces: Vec<(String, &ValueSurface)> = vec![("u0 half-line".into(), &half)];
    surfaces.extend(l0.slices.iter().map(|s| ("level 0".to_string(), s)));
    surfaces.extend(l1.slices.iter().map(|s| ("level 1".to_string(), s)));
    for s in &base.levels {
        for slice in &s.family.slices {
            surfaces.push((format!("baseline n={} θ={}", s.grid.n_time, slice.theta), slice));
        }
    }

    let criteria: Vec<(&str, Check)> = vec![
        ("boundary exactness", Box::new(|| criterion_1(&surfaces))),
        ("growth sandwich", Box::new(|| criterion_2(&base))),
        ("monotonicity in x", Box::new(|| criterion_3(&surfaces))),
        ("Hamiltonian oracle", Box::new(criterion_4)),
        ("agent-side oracle", Box::new(criterion_5)),
        ("single-type comparison", Box::new(criterion_6)),
        ("quit gain", Box::new(criterion_7)),
        ("fixed-point convergence", Box::new(|| criterion_8(&base))),
        ("MC vs PDE", Box::new(|| criterion_9(&base))),
        ("quit-count decay", Box::new(criterion_10)),
        ("DPP residual", Box::new(|| criterion_11(&base))),
        ("determinism", Box::new(criterion_12)),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        if !o.passed {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {} [{:.1}s]",
            n + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} passed in {:.0}s", criteria.len() - failed, criteria.len(), clock.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Monotone finite-difference solver for the principal's HJB equation on a
//! single θ-slice.
//!
//! Each time step is implicit: the discrete Hamiltonian is maximised exactly
//! at every node and the resulting tridiagonal systems are iterated to a
//! fixed policy (Howard's algorithm). Upwinding is on the sign of the total
//! drift in stretched coordinates, so the scheme is monotone for any step
//! size. An explicit variant is kept for cross-checks on small grids.

mod hamiltonian;
mod scheme;
mod surface;
mod tridiag;

use serde::{Deserialize, Serialize};

pub use hamiltonian::{
    hamiltonian, local_sup, reduced_hamiltonian, ControlBounds, HamiltonianValue, NodeControl, NodeFlags, Stencil,
};
pub use surface::{DomainKind, FlagSummary, QuitIndex, ValueSurface};

use crate::error::{Error, Result};
use crate::market::MarketEnvironment;
use scheme::{solve_strip, Strip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stepping {
    #[default]
    Implicit,
    Explicit,
}

/// Discretisation parameters shared by every θ-slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverGrid {
    pub n_time: usize,
    pub n_space: usize,
    /// Half-line truncation as a multiple of `L̄_0`.
    pub x_min_depth: f64,
    pub z_max: Option<f64>,
    pub eta_min: Option<f64>,
    pub eps_term: Option<f64>,
    pub stepping: Stepping,
    pub howard_tol: f64,
    pub howard_max_iter: usize,
}

impl SolverGrid {
    pub fn new(n_time: usize, n_space: usize) -> Self {
        Self {
            n_time,
            n_space,
            x_min_depth: 20.0,
            z_max: None,
            eta_min: None,
            eps_term: None,
            stepping: Stepping::Implicit,
            howard_tol: 1e-13,
            howard_max_iter: 200,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n_time < 2 || self.n_space < 3 {
            return Err(Error::Config(format!(
                "need n_time >= 2 and n_space >= 3, got {} and {}",
                self.n_time, self.n_space
            )));
        }
        if !(self.x_min_depth >= 1.0) {
            return Err(Error::Config(format!("x_min_depth must be >= 1, got {}", self.x_min_depth)));
        }
        if let Some(z) = self.z_max {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::Config(format!("z_max must be positive, got {z}")));
            }
        }
        if let Some(e) = self.eps_term {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("eps_term must be non-negative, got {e}")));
            }
        }
        if !(self.howard_tol > 0.0) || self.howard_max_iter == 0 {
            return Err(Error::Config("policy-iteration tolerance and cap must be positive".into()));
        }
        Ok(())
    }

    /// Halve `Δt` and `Δξ` `k` times.
    pub fn refined(&self, k: u32) -> Self {
        let mut g = self.clone();
        for _ in 0..k {
            g.n_time *= 2;
            g.n_space = 2 * (g.n_space - 1) + 1;
            g.eps_term = g.eps_term.map(|e| e / 2.0);
        }
        g
    }

    pub fn dt(&self, env: &MarketEnvironment) -> f64 {
        env.horizon / self.n_time as f64
    }

    pub fn times(&self, env: &MarketEnvironment) -> Vec<f64> {
        let dt = self.dt(env);
        let mut t: Vec<f64> = (0..=self.n_time).map(|k| k as f64 * dt).collect();
        t[self.n_time] = env.horizon;
        t
    }

    pub fn eps_term(&self, env: &MarketEnvironment) -> f64 {
        self.eps_term.unwrap_or(2.0 * self.dt(env))
    }

    /// First row closed by the terminal layer.
    pub fn layer_start(&self, env: &MarketEnvironment) -> usize {
        let eps = self.eps_term(env);
        let times = self.times(env);
        let tol = 1e-9 * env.horizon;
        (0..self.n_time).find(|&k| env.horizon - times[k] <= eps + tol).unwrap_or(self.n_time)
    }

    /// Truncation point of the half-line domain for type `idx`.
    pub fn x_min(&self, env: &MarketEnvironment, idx: usize) -> f64 {
        let depth = self.x_min_depth * env.upper_at(idx, 0.0);
        let deepest = self
            .times(env)
            .iter()
            .map(|&t| env.lower_at(idx, t))
            .chain(env.types.get(idx).ir.points().iter().map(|&(t, _)| env.lower_at(idx, t)))
            .fold(f64::INFINITY, f64::min);
        depth.min(2.0 * deepest)
    }

    /// Lower clip of the payment rate, shared by all types.
    pub fn eta_min(&self, env: &MarketEnvironment) -> f64 {
        if let Some(e) = self.eta_min {
            return e;
        }
        let (lambda_lower, _) = env.types.lambda_bounds();
        let eps = self.eps_term(env).max(self.dt(env));
        let depth = (0..env.types.len()).map(|i| -self.x_min(env, i)).fold(0.0, f64::max);
        let slope = env.lipschitz.unwrap_or_else(|| env.measured_lipschitz());
        let cap = 2.0 * (depth / (lambda_lower * eps)).max(1.0 + slope / lambda_lower);
        -cap.ln() / lambda_lower
    }

    pub fn bounds(&self, env: &MarketEnvironment, min_width: f64) -> ControlBounds {
        let z_max = self.z_max.unwrap_or_else(|| 10.0 * env.types.theta_max() * (1.0 + 1.0 / min_width));
        ControlBounds { eta_min: self.eta_min(env).min(env.payment_cap), eta_max: env.payment_cap, z_max }
    }
}

/// Value of the constant contract that pays exactly enough to bring the
/// agent from `x` to zero utility at `T`.
pub fn terminal_layer_value(env: &MarketEnvironment, theta: f64, t: f64, x: f64) -> Result<f64> {
    let idx = env.type_index(theta)?;
    if !(x < 0.0) {
        return Err(Error::Domain(format!("terminal layer needs x < 0, got {x}")));
    }
    if !(t >= 0.0 && t <= env.horizon) {
        return Err(Error::Domain(format!("t = {t} outside [0, {}]", env.horizon)));
    }
    Ok(scheme::layer_value(env.lambda(idx), env.horizon - t, x))
}

struct SliceSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    lower_data: Vec<f64>,
    lower_floor: bool,
    domain: DomainKind,
    quit_index: QuitIndex,
}

fn solve_slice(env: &MarketEnvironment, idx: usize, grid: &SolverGrid, spec: SliceSpec) -> Result<ValueSurface> {
    grid.check()?;
    let times = grid.times(env);
    let min_width = spec
        .lower
        .iter()
        .zip(&spec.upper)
        .map(|(lo, hi)| hi - lo)
        .fold(f64::INFINITY, f64::min);
    if !(min_width > 0.0) {
        return Err(Error::Internal(format!("slice for theta = {} has non-positive width", env.theta(idx))));
    }
    let bounds = grid.bounds(env, min_width);
    let strip = Strip {
        theta: env.theta(idx),
        lambda: env.lambda(idx),
        payment_cap: env.payment_cap,
        horizon: env.horizon,
        times: &times,
        lower: &spec.lower,
        upper: &spec.upper,
        lower_data: &spec.lower_data,
        lower_floor: spec.lower_floor,
        n_space: grid.n_space,
        bounds,
        layer_start: grid.layer_start(env),
        stepping: grid.stepping,
        howard_tol: grid.howard_tol,
        howard_max_iter: grid.howard_max_iter,
    };
    let sol = solve_strip(&strip)?;
    Ok(ValueSurface {
        theta: env.theta(idx),
        lambda: env.lambda(idx),
        payment_cap: env.payment_cap,
        horizon: env.horizon,
        quit_index: spec.quit_index,
        domain: spec.domain,
        bounds,
        eps_term: grid.eps_term(env),
        times,
        lower: spec.lower,
        upper: spec.upper,
        n_space: grid.n_space,
        values: sol.values,
        flags: sol.flags,
        boundary_lower: spec.lower_data,
        howard_iterations: sol.howard_iterations,
    })
}

/// No-quit value `u₀` on the truncated half-line `[x_min, L̄_t]`, closed at
/// `x_min` by the constant-contract value.
pub fn solve_u0(env: &MarketEnvironment, theta: f64, grid: &SolverGrid) -> Result<ValueSurface> {
    env.ensure_valid()?;
    let idx = env.type_index(theta)?;
    let times = grid.times(env);
    let x_min = grid.x_min(env, idx);
    let lambda = env.lambda(idx);
    let spec = SliceSpec {
        lower: vec![x_min; times.len()],
        upper: times.iter().map(|&t| env.upper_at(idx, t)).collect(),
        lower_data: times.iter().map(|&t| scheme::layer_value(lambda, env.horizon - t, x_min)).collect(),
        lower_floor: true,
        domain: DomainKind::HalfLine { x_min },
        quit_index: QuitIndex::Finite(0),
    };
    solve_slice(env, idx, grid, spec)
}

/// Value on `D_θ` with Dirichlet data `g` (sampled on the time grid) at the
/// lower barrier.
pub fn solve_with_lower_boundary(
    env: &MarketEnvironment,
    theta: f64,
    g: &[f64],
    grid: &SolverGrid,
    quit_index: QuitIndex,
) -> Result<ValueSurface> {
    env.ensure_valid()?;
    let idx = env.type_index(theta)?;
    let times = grid.times(env);
    if g.len() != times.len() {
        return Err(Error::Config(format!(
            "boundary curve has {} samples, time grid has {}",
            g.len(),
            times.len()
        )));
    }
    if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
        return Err(Error::Config(format!("boundary curve is not finite ({bad})")));
    }
    let spec = SliceSpec {
        lower: times.iter().map(|&t| env.lower_at(idx, t)).collect(),
        upper: times.iter().map(|&t| env.upper_at(idx, t)).collect(),
        lower_data: g.to_vec(),
        lower_floor: false,
        domain: DomainKind::Band,
        quit_index,
    };
    solve_slice(env, idx, grid, spec)
}

/// `u₀` on `D_θ`: the band problem with the half-line solution as lower
/// boundary data.
pub fn restrict_u0(env: &MarketEnvironment, half: &ValueSurface, grid: &SolverGrid) -> Result<ValueSurface> {
    let idx = env.type_index(half.theta)?;
    let times = grid.times(env);
    let n_t = times.len() - 1;
    let g = times
        .iter()
        .enumerate()
        .map(|(k, &t)| if k == n_t { Ok(0.0) } else { half.interpolate(t, env.lower_at(idx, t)) })
        .collect::<Result<Vec<f64>>>()?;
    solve_with_lower_boundary(env, half.theta, &g, grid, QuitIndex::Finite(0))
}

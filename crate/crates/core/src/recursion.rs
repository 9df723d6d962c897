//! Value functions with a bounded and an unbounded number of quits.
//!
//! Slices for different types only interact through the re-hiring curve
//! `ū(t) = max_θ u(θ; t, Rᶿ_t) − c^P_t`, which becomes the lower-barrier data
//! of the next level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::{self, ControlBounds, FlagSummary, QuitIndex, SolverGrid, ValueSurface};
use crate::market::MarketEnvironment;

/// One level of the recursion: a surface per type plus its coupling curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFamily {
    pub level: QuitIndex,
    pub times: Vec<f64>,
    pub slices: Vec<ValueSurface>,
    pub ubar: Vec<f64>,
    /// Index of the type attaining `ū` at each grid time.
    pub argmax: Vec<usize>,
}

impl SurfaceFamily {
    pub fn slice(&self, theta: f64) -> Result<&ValueSurface> {
        self.slices.iter().find(|s| s.theta == theta).ok_or(Error::UnknownType(theta))
    }

    pub fn flag_summary(&self) -> FlagSummary {
        let mut total = FlagSummary::default();
        for s in &self.slices {
            total.add(&s.flag_summary());
        }
        total
    }

    /// `ū` at an arbitrary time, linear between grid nodes.
    pub fn ubar_at(&self, t: f64) -> f64 {
        let n = self.times.len() - 1;
        let dt = self.times[n] / n as f64;
        let k = ((t / dt).floor().max(0.0) as usize).min(n - 1);
        let a = ((t - self.times[k]) / dt).clamp(0.0, 1.0);
        (1.0 - a) * self.ubar[k] + a * self.ubar[k + 1]
    }
}

/// `a / n^b` fitted by least squares in log-log coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `‖ūₙ − ūₙ₋₁‖∞` for `n = 1, 2, …`.
    pub deltas: Vec<f64>,
    pub iterations: usize,
    pub tol: f64,
    pub n_max: usize,
    pub converged: bool,
    pub fit: Option<DecayFit>,
    pub c_over_n_consistent: bool,
    pub grid: SolverGrid,
    pub bounds: Vec<ControlBounds>,
    pub flags: FlagSummary,
}

/// Re-hiring curve of a set of slices. Ties go to the smallest θ.
pub fn compute_ubar(slices: &[ValueSurface], env: &MarketEnvironment) -> Result<(Vec<f64>, Vec<usize>)> {
    let first = slices.first().ok_or_else(|| Error::Internal("empty surface family".into()))?;
    let times = &first.times;
    let n_t = times.len() - 1;
    let mut ubar = Vec::with_capacity(times.len());
    let mut argmax = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, 0);
        for s in slices {
            let idx = env.type_index(s.theta)?;
            let v = s.interpolate(t, env.ir_at(idx, t)).map_err(|e| {
                Error::Internal(format!("IR curve leaves the slice for theta = {}: {e}", s.theta))
            })?;
            if v > best.0 {
                best = (v, idx);
            }
        }
        let value = if k == n_t { 0.0 } else { best.0 };
        ubar.push(value - env.principal_cost_at(t));
        argmax.push(best.1);
    }
    Ok((ubar, argmax))
}

fn assemble(level: QuitIndex, slices: Vec<ValueSurface>, env: &MarketEnvironment) -> Result<SurfaceFamily> {
    let (ubar, argmax) = compute_ubar(&slices, env)?;
    Ok(SurfaceFamily { level, times: slices[0].times.clone(), slices, ubar, argmax })
}

/// Half-line `u₀` for every type.
pub fn solve_u0_all(env: &MarketEnvironment, grid: &SolverGrid) -> Result<Vec<ValueSurface>> {
    env.types.theta_values().par_iter().map(|&theta| hjb::solve_u0(env, theta, grid)).collect()
}

/// Level 0 restricted to the quit domains.
pub fn level_zero(env: &MarketEnvironment, grid: &SolverGrid) -> Result<SurfaceFamily> {
    let half = solve_u0_all(env, grid)?;
    let slices = half.par_iter().map(|h| hjb::restrict_u0(env, h, grid)).collect::<Result<Vec<_>>>()?;
    assemble(QuitIndex::Finite(0), slices, env)
}

/// Solve every slice against the previous coupling curve.
pub fn iterate_level(prev: &SurfaceFamily, env: &MarketEnvironment, grid: &SolverGrid) -> Result<SurfaceFamily> {
    let level = QuitIndex::Finite(prev.level.level() + 1);
    let slices = env
        .types
        .theta_values()
        .par_iter()
        .map(|&theta| hjb::solve_with_lower_boundary(env, theta, &prev.ubar, grid, level))
        .collect::<Result<Vec<_>>>()?;
    assemble(level, slices, env)
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn fit_decay(deltas: &[f64]) -> Option<DecayFit> {
    let pts: Vec<(f64, f64)> = deltas
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0 && d.is_finite())
        .map(|(i, &d)| (((i + 1) as f64).ln(), d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(DecayFit { a: (my - slope * mx).exp(), b: -slope })
}

/// Iterate levels until the coupling curve settles.
pub fn fixed_point(
    env: &MarketEnvironment,
    grid: &SolverGrid,
    tol: f64,
    n_max: usize,
) -> Result<(SurfaceFamily, ConvergenceReport)> {
    if !(tol > 0.0) || n_max < 1 {
        return Err(Error::Config(format!("need tol > 0 and n_max >= 1, got {tol} and {n_max}")));
    }
    let mut family = level_zero(env, grid)?;
    let mut deltas = Vec::new();
    let mut converged = false;
    for _ in 0..n_max {
        let next = iterate_level(&family, env, grid)?;
        let delta = sup_distance(&next.ubar, &family.ubar);
        deltas.push(delta);
        family = next;
        if delta <= tol {
            converged = true;
            break;
        }
    }
    let n = family.level.level();
    family.level = QuitIndex::Limit(n);
    for s in &mut family.slices {
        s.quit_index = QuitIndex::Limit(n);
    }
    let fit = fit_decay(&deltas);
    let report = ConvergenceReport {
        iterations: deltas.len(),
        c_over_n_consistent: fit.map_or(converged, |f| f.b >= 1.0),
        deltas,
        tol,
        n_max,
        converged,
        fit,
        grid: grid.clone(),
        bounds: family.slices.iter().map(|s| s.bounds).collect(),
        flags: family.flag_summary(),
    };
    Ok((family, report))
}

/// `V^P(θ; t) = u(θ; t, Rᶿ_t)`.
pub fn principal_value(family: &SurfaceFamily, theta: f64, t: f64, env: &MarketEnvironment) -> Result<f64> {
    let idx = env.type_index(theta)?;
    family.slice(theta)?.interpolate(t, env.ir_at(idx, t))
}

/// `max_θ V^P(θ; t)` with its maximiser (ties to the smallest θ).
pub fn best_principal_value(family: &SurfaceFamily, t: f64, env: &MarketEnvironment) -> Result<(usize, f64)> {
    let mut best = (0, f64::NEG_INFINITY);
    for (idx, ty) in env.types.iter().enumerate() {
        let v = principal_value(family, ty.theta, t, env)?;
        if v > best.1 {
            best = (idx, v);
        }
    }
    Ok(best)
}

use serde::{Deserialize, Serialize};

use super::hamiltonian::{ControlBounds, NodeFlags};
use crate::error::{Error, Result};

/// Which value function a surface approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuitIndex {
    Finite(usize),
    /// Last level of a fixed-point iteration.
    Limit(usize),
}

impl QuitIndex {
    pub fn level(self) -> usize {
        match self {
            QuitIndex::Finite(n) | QuitIndex::Limit(n) => n,
        }
    }
}

impl std::fmt::Display for QuitIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuitIndex::Finite(n) => write!(f, "u{n}"),
            QuitIndex::Limit(n) => write!(f, "u_inf(n={n})"),
        }
    }
}

/// Spatial extent of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DomainKind {
    /// `[x_min, L̄_t]`, no quitting.
    HalfLine { x_min: f64 },
    /// `[L̲_t, L̄_t]` with Dirichlet data on the lower barrier.
    Band,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagSummary {
    pub z_unbounded: usize,
    pub z_clipped: usize,
    pub eta_clipped: usize,
    pub boundary: usize,
    pub terminal_layer: usize,
}

impl FlagSummary {
    pub fn add(&mut self, other: &FlagSummary) {
        self.z_unbounded += other.z_unbounded;
        self.z_clipped += other.z_clipped;
        self.eta_clipped += other.eta_clipped;
        self.boundary += other.boundary;
        self.terminal_layer += other.terminal_layer;
    }
}

/// Grid values of one value function on one θ-slice.
///
/// Row `k` lives at `times[k]` and spans `[lower[k], upper[k]]` with
/// `n_space` uniformly spaced nodes in the stretched coordinate
/// `ξ = (x − lower)/(upper − lower)`. Column 0 holds the Dirichlet data and
/// the last column is the upper barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSurface {
    pub theta: f64,
    pub lambda: f64,
    pub payment_cap: f64,
    pub horizon: f64,
    pub quit_index: QuitIndex,
    pub domain: DomainKind,
    pub bounds: ControlBounds,
    pub eps_term: f64,
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_space: usize,
    pub values: Vec<f64>,
    pub flags: Vec<NodeFlags>,
    pub boundary_lower: Vec<f64>,
    /// Largest number of policy-iteration sweeps used by any time step.
    pub howard_iterations: usize,
}

impl ValueSurface {
    pub fn n_time(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_time() as f64
    }

    pub fn dxi(&self) -> f64 {
        1.0 / (self.n_space - 1) as f64
    }

    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.n_space + i]
    }

    pub fn flag(&self, k: usize, i: usize) -> NodeFlags {
        self.flags[k * self.n_space + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_space..(k + 1) * self.n_space]
    }

    pub fn x(&self, k: usize, i: usize) -> f64 {
        let xi = i as f64 * self.dxi();
        self.lower[k] + xi * (self.upper[k] - self.lower[k])
    }

    /// Physical spacing on row `k`.
    pub fn spacing(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) * self.dxi()
    }

    /// `max_k |u(t_k, L̄_{t_k}) + C₀(T − t_k)|`.
    pub fn upper_residual(&self) -> f64 {
        (0..self.times.len())
            .map(|k| {
                let exact = -self.payment_cap * (self.horizon - self.times[k]);
                (self.value(k, self.n_space - 1) - exact).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest `|u(T, x)|` over the interior terminal nodes.
    pub fn terminal_residual(&self) -> f64 {
        let k = self.n_time();
        self.row(k)[1..].iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Largest increase `u[k][i+1] − u[k][i]` over interior nodes. Column 0
    /// carries boundary data that may sit below the interior limit.
    pub fn monotonicity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.times.len() {
            let row = self.row(k);
            for i in 1..self.n_space - 1 {
                worst = worst.max(row[i + 1] - row[i]);
            }
        }
        worst
    }

    pub fn flag_summary(&self) -> FlagSummary {
        let mut s = FlagSummary::default();
        for f in &self.flags {
            if f.contains(NodeFlags::Z_UNBOUNDED) {
                s.z_unbounded += 1;
            }
            if f.contains(NodeFlags::Z_CLIPPED) {
                s.z_clipped += 1;
            }
            if f.contains(NodeFlags::ETA_CLIPPED) {
                s.eta_clipped += 1;
            }
            if f.contains(NodeFlags::BOUNDARY) {
                s.boundary += 1;
            }
            if f.contains(NodeFlags::TERMINAL_LAYER) {
                s.terminal_layer += 1;
            }
        }
        s
    }

    /// Row index and weight of `t`: `t = (1−a)·t_k + a·t_{k+1}`.
    pub(crate) fn locate_time(&self, t: f64) -> Result<(usize, f64)> {
        if !(t >= -1e-12 && t <= self.horizon * (1.0 + 1e-12)) || !t.is_finite() {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        let dt = self.dt();
        let k = ((t / dt).floor().max(0.0) as usize).min(self.n_time() - 1);
        let a = ((t - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        Ok((k, a))
    }

    /// Grid edges at an arbitrary time, linear between rows.
    pub fn edges_at(&self, t: f64) -> Result<(f64, f64)> {
        let (k, a) = self.locate_time(t)?;
        let lo = (1.0 - a) * self.lower[k] + a * self.lower[k + 1];
        let hi = (1.0 - a) * self.upper[k] + a * self.upper[k + 1];
        Ok((lo, hi))
    }

    fn row_at_xi(&self, k: usize, xi: f64) -> f64 {
        let pos = xi * (self.n_space - 1) as f64;
        let j = (pos.floor() as usize).min(self.n_space - 2);
        let b = pos - j as f64;
        let row = self.row(k);
        (1.0 - b) * row[j] + b * row[j + 1]
    }

    /// Bilinear interpolation in `(t, ξ)`.
    pub fn interpolate(&self, t: f64, x: f64) -> Result<f64> {
        let (k, a) = self.locate_time(t)?;
        let lo = (1.0 - a) * self.lower[k] + a * self.lower[k + 1];
        let hi = (1.0 - a) * self.upper[k] + a * self.upper[k + 1];
        let width = hi - lo;
        let xi = (x - lo) / width;
        let slack = 1e-9 * (1.0 + x.abs()) / width;
        if !(xi >= -slack && xi <= 1.0 + slack) {
            return Err(Error::Domain(format!(
                "x = {x} outside slice [{lo}, {hi}] at t = {t} (theta = {})",
                self.theta
            )));
        }
        let xi = xi.clamp(0.0, 1.0);
        Ok(match a {
            0.0 => self.row_at_xi(k, xi),
            1.0 => self.row_at_xi(k + 1, xi),
            _ => (1.0 - a) * self.row_at_xi(k, xi) + a * self.row_at_xi(k + 1, xi),
        })
    }
}

//! Feedback contracts read off a solved value surface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::{hamiltonian, local_sup, ControlBounds, NodeFlags, Stencil, ValueSurface};
use crate::market::MarketEnvironment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyField {
    pub theta: f64,
    pub lambda: f64,
    pub payment_cap: f64,
    pub horizon: f64,
    pub eps_term: f64,
    pub bounds: ControlBounds,
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n_space: usize,
    pub eta_star: Vec<f64>,
    pub z_star: Vec<f64>,
    pub clip_flags: Vec<NodeFlags>,
}

/// Optimal controls at a node with derivatives `p`, `q`, restricted to the box.
pub fn optimal_controls(theta: f64, lambda: f64, bounds: &ControlBounds, p: f64, q: f64) -> (f64, f64, NodeFlags) {
    let a = q + theta * p;
    if a < 0.0 && p < 0.0 {
        let mut flags = NodeFlags::empty();
        let mut z = -theta / a;
        if z > bounds.z_max {
            z = bounds.z_max;
            flags |= NodeFlags::Z_CLIPPED;
        }
        let mut eta = (-(-1.0 / (lambda * lambda * p)).ln() / lambda).min(bounds.eta_max);
        if eta < bounds.eta_min {
            eta = bounds.eta_min;
            flags |= NodeFlags::ETA_CLIPPED;
        }
        (eta, z, flags)
    } else {
        let h = hamiltonian(theta, lambda, bounds, p, q);
        (h.eta, h.z, h.flags)
    }
}

/// Feedback controls on the surface grid: at each interior node the maximiser
/// of the same upwinded discrete Hamiltonian the solver used, evaluated on
/// the solved row. One-sided slopes keep the Dirichlet column out of the
/// drift when the solution detaches from its boundary data. Boundary columns
/// carry the barrier contracts and rows inside the terminal layer the
/// constant liquidation contract.
pub fn extract_policy(surface: &ValueSurface, env: &MarketEnvironment) -> Result<PolicyField> {
    let idx = env.type_index(surface.theta)?;
    let (theta, lambda) = (surface.theta, env.lambda(idx));
    let n = surface.n_space;
    let n_t = surface.n_time();
    let bounds = surface.bounds;
    let dxi = surface.dxi();
    let mut eta_star = vec![0.0; surface.values.len()];
    let mut z_star = vec![0.0; surface.values.len()];
    let mut clip_flags = vec![NodeFlags::empty(); surface.values.len()];
    let tol = 1e-9 * surface.horizon;
    for k in 0..n_t {
        let tau = surface.horizon - surface.times[k];
        let base = k * n;
        let in_layer = tau <= surface.eps_term + tol;
        let h = surface.spacing(k);
        let dt = surface.times[k + 1] - surface.times[k];
        let row = surface.row(k);
        for i in 1..n - 1 {
            let (eta, z, flags) = if in_layer {
                let x = surface.x(k, i);
                let eta = (-(-x / (tau * lambda)).ln() / lambda).min(env.payment_cap);
                (eta, 0.0, NodeFlags::TERMINAL_LAYER)
            } else {
                let xi = i as f64 * dxi;
                let moved = surface.lower[k + 1] + xi * (surface.upper[k + 1] - surface.lower[k + 1]);
                let st = Stencil {
                    p_fwd: (row[i + 1] - row[i]) / h,
                    p_bwd: (row[i] - row[i - 1]) / h,
                    q: (row[i + 1] - 2.0 * row[i] + row[i - 1]) / (h * h),
                    velocity: (moved - surface.x(k, i)) / dt,
                };
                let c = local_sup(theta, lambda, &bounds, &st);
                (c.eta, c.z, c.flags)
            };
            eta_star[base + i] = eta;
            z_star[base + i] = z;
            clip_flags[base + i] = flags;
        }
        eta_star[base] = eta_star[base + 1];
        z_star[base] = z_star[base + 1];
        clip_flags[base] = clip_flags[base + 1] | NodeFlags::BOUNDARY;
        eta_star[base + n - 1] = env.payment_cap;
        z_star[base + n - 1] = 0.0;
        clip_flags[base + n - 1] = NodeFlags::BOUNDARY;
    }
    // No payment flows at T; keep the last row usable for interpolation.
    let (head, tail) = eta_star.split_at_mut(n_t * n);
    tail.copy_from_slice(&head[(n_t - 1) * n..]);
    let (head, tail) = z_star.split_at_mut(n_t * n);
    tail.copy_from_slice(&head[(n_t - 1) * n..]);
    let (head, tail) = clip_flags.split_at_mut(n_t * n);
    tail.copy_from_slice(&head[(n_t - 1) * n..]);

    Ok(PolicyField {
        theta,
        lambda,
        payment_cap: env.payment_cap,
        horizon: surface.horizon,
        eps_term: surface.eps_term,
        bounds,
        times: surface.times.clone(),
        lower: surface.lower.clone(),
        upper: surface.upper.clone(),
        n_space: n,
        eta_star,
        z_star,
        clip_flags,
    })
}

impl PolicyField {
    fn n_time(&self) -> usize {
        self.times.len() - 1
    }

    /// Bilinear lookup of `(η*, z*)` in `(t, ξ)`; `x` is clamped into the slice.
    pub fn control_at(&self, t: f64, x: f64) -> Result<(f64, f64)> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        let n_t = self.n_time();
        let dt = self.horizon / n_t as f64;
        let k = ((t / dt).floor() as usize).min(n_t - 1);
        let a = ((t - self.times[k]) / dt).clamp(0.0, 1.0);
        let lo = (1.0 - a) * self.lower[k] + a * self.lower[k + 1];
        let hi = (1.0 - a) * self.upper[k] + a * self.upper[k + 1];
        let xi = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
        let pos = xi * (self.n_space - 1) as f64;
        let j = (pos.floor() as usize).min(self.n_space - 2);
        let b = pos - j as f64;
        let at = |field: &[f64], row: usize| {
            let base = row * self.n_space + j;
            (1.0 - b) * field[base] + b * field[base + 1]
        };
        let eta = (1.0 - a) * at(&self.eta_star, k) + a * at(&self.eta_star, k + 1);
        let z = (1.0 - a) * at(&self.z_star, k) + a * at(&self.z_star, k + 1);
        Ok((eta.min(self.payment_cap), z))
    }

    pub fn clipped_nodes(&self) -> usize {
        self.clip_flags.iter().filter(|f| f.intersects(NodeFlags::CLIPPING)).count()
    }
}

//! Backward time marching on a single θ-slice in stretched coordinates.

use super::hamiltonian::{local_sup, ControlBounds, NodeControl, NodeFlags, Stencil};
use super::tridiag;
use super::Stepping;
use crate::error::{Error, Result};

pub(crate) struct Strip<'a> {
    pub theta: f64,
    pub lambda: f64,
    pub payment_cap: f64,
    pub horizon: f64,
    pub times: &'a [f64],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
    pub lower_data: &'a [f64],
    /// Treat `lower_data` as a floor, `v₀ = max(g, v₁)`, instead of a
    /// Dirichlet value.
    pub lower_floor: bool,
    pub n_space: usize,
    pub bounds: ControlBounds,
    /// Rows `k ≥ layer_start` (and `k < n_time`) are filled analytically.
    pub layer_start: usize,
    pub stepping: Stepping,
    pub howard_tol: f64,
    pub howard_max_iter: usize,
}

pub(crate) struct StripSolution {
    pub values: Vec<f64>,
    pub flags: Vec<NodeFlags>,
    pub howard_iterations: usize,
}

/// Constant-contract value `((T−t)/λ) ln(−x/((T−t)λ))`.
pub(crate) fn layer_value(lambda: f64, tau: f64, x: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    tau / lambda * (-x / (tau * lambda)).ln()
}

/// Coefficients of the upwinded operator at one node under a fixed control:
/// `L v = up·(v₊ − v) + dn·(v₋ − v) + θz − η`.
#[inline]
fn coefficients(ctrl: &NodeControl, h: f64) -> (f64, f64) {
    let diff = 0.5 * ctrl.z * ctrl.z / (h * h);
    (diff + ctrl.drift.max(0.0) / h, diff + (-ctrl.drift).max(0.0) / h)
}

/// Explicit update of one node from its three neighbours on the next row.
pub(crate) fn explicit_node(
    theta: f64,
    lambda: f64,
    bounds: &ControlBounds,
    h: f64,
    dt: f64,
    velocity: f64,
    v: [f64; 3],
) -> (f64, NodeControl) {
    let st = Stencil {
        p_fwd: (v[2] - v[1]) / h,
        p_bwd: (v[1] - v[0]) / h,
        q: (v[2] - 2.0 * v[1] + v[0]) / (h * h),
        velocity,
    };
    let ctrl = local_sup(theta, lambda, bounds, &st);
    (v[1] + dt * ctrl.value, ctrl)
}

/// Largest stable explicit step for the given strip.
pub(crate) fn explicit_step_limit(p: &Strip) -> f64 {
    let n_t = p.times.len() - 1;
    let dxi = 1.0 / (p.n_space - 1) as f64;
    let e_hi = p.lambda * (-p.lambda * p.bounds.eta_min).exp();
    let drift = e_hi + 0.5 * p.theta * p.bounds.z_max * p.bounds.z_max;
    let mut limit = f64::INFINITY;
    for k in 0..n_t {
        let dt = p.times[k + 1] - p.times[k];
        let h = (p.upper[k] - p.lower[k]) * dxi;
        let vel = (p.lower[k + 1] - p.lower[k]).abs().max((p.upper[k + 1] - p.upper[k]).abs()) / dt;
        let z2 = p.bounds.z_max * p.bounds.z_max;
        limit = limit.min(h * h / (z2 + h * (drift + vel)));
    }
    limit
}

pub(crate) fn solve_strip(p: &Strip) -> Result<StripSolution> {
    let n_t = p.times.len() - 1;
    let n = p.n_space;
    if n < 3 || n_t < 2 {
        return Err(Error::Config(format!("grid too small: n_time = {n_t}, n_space = {n}")));
    }
    if p.stepping == Stepping::Explicit {
        let dt = p.horizon / n_t as f64;
        let limit = explicit_step_limit(p);
        if dt > limit {
            return Err(Error::Config(format!(
                "explicit step dt = {dt:.3e} violates the CFL bound {limit:.3e}; refine n_time or use implicit stepping"
            )));
        }
    }
    let dxi = 1.0 / (n - 1) as f64;
    let mut values = vec![0.0; (n_t + 1) * n];
    let mut flags = vec![NodeFlags::empty(); (n_t + 1) * n];
    let mut howard_iterations = 0;

    // Terminal row.
    {
        let row = &mut values[n_t * n..];
        row[0] = p.lower_data[n_t];
        let fl = &mut flags[n_t * n..];
        fl[0] = NodeFlags::BOUNDARY;
        fl[n - 1] = NodeFlags::BOUNDARY;
        for f in &mut fl[1..n - 1] {
            *f = NodeFlags::TERMINAL_LAYER;
        }
    }

    let m = n - 1;
    let mut sub = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut controls = vec![
        NodeControl { eta: 0.0, z: 0.0, drift: 0.0, value: 0.0, flags: NodeFlags::empty() };
        m
    ];
    let mut current = vec![0.0; n];

    for k in (0..n_t).rev() {
        let tau = p.horizon - p.times[k];
        let (head, tail) = values.split_at_mut((k + 1) * n);
        let row = &mut head[k * n..];
        let next = &tail[..n];
        let fl = &mut flags[k * n..(k + 1) * n];
        let w = p.upper[k] - p.lower[k];
        row[0] = p.lower_data[k];
        row[n - 1] = -p.payment_cap * tau;
        fl[0] = NodeFlags::BOUNDARY;
        fl[n - 1] = NodeFlags::BOUNDARY;

        if k >= p.layer_start {
            for i in 1..n - 1 {
                let x = p.lower[k] + i as f64 * dxi * w;
                row[i] = layer_value(p.lambda, tau, x);
                fl[i] = NodeFlags::TERMINAL_LAYER;
            }
            continue;
        }

        let dt = p.times[k + 1] - p.times[k];
        let h = w * dxi;
        let w_next = p.upper[k + 1] - p.lower[k + 1];
        let velocity = |i: usize| {
            let xi = i as f64 * dxi;
            ((p.lower[k + 1] + xi * w_next) - (p.lower[k] + xi * w)) / dt
        };

        match p.stepping {
            Stepping::Explicit => {
                for i in 1..n - 1 {
                    let (v, ctrl) = explicit_node(
                        p.theta,
                        p.lambda,
                        &p.bounds,
                        h,
                        dt,
                        velocity(i),
                        [next[i - 1], next[i], next[i + 1]],
                    );
                    row[i] = v;
                    fl[i] = ctrl.flags;
                }
                if p.lower_floor {
                    row[0] = row[0].max(row[1]);
                }
            }
            Stepping::Implicit => {
                // Unknowns are v_0 ..= v_{n-2}; row 0 is the lower closure.
                current.copy_from_slice(next);
                current[0] = row[0];
                current[n - 1] = row[n - 1];
                let scale = 1.0 + next[1..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let mut iters = 0;
                loop {
                    iters += 1;
                    diag[0] = 1.0;
                    sub[0] = 0.0;
                    if p.lower_floor && current[1] > p.lower_data[k] {
                        sup[0] = -1.0;
                        rhs[0] = 0.0;
                    } else {
                        sup[0] = 0.0;
                        rhs[0] = p.lower_data[k];
                    }
                    for i in 1..n - 1 {
                        let st = Stencil {
                            p_fwd: (current[i + 1] - current[i]) / h,
                            p_bwd: (current[i] - current[i - 1]) / h,
                            q: (current[i + 1] - 2.0 * current[i] + current[i - 1]) / (h * h),
                            velocity: velocity(i),
                        };
                        let ctrl = local_sup(p.theta, p.lambda, &p.bounds, &st);
                        let (up, dn) = coefficients(&ctrl, h);
                        sub[i] = -dn;
                        sup[i] = -up;
                        diag[i] = 1.0 / dt + up + dn;
                        rhs[i] = next[i] / dt + p.theta * ctrl.z - ctrl.eta;
                        controls[i] = ctrl;
                    }
                    rhs[m - 1] -= sup[m - 1] * current[n - 1];
                    tridiag::solve_in_place(&sub, &diag, &sup, &mut rhs, &mut scratch);
                    let mut change = 0.0f64;
                    for i in 0..m {
                        change = change.max((rhs[i] - current[i]).abs());
                        current[i] = rhs[i];
                    }
                    if !change.is_finite() {
                        return Err(Error::Internal(format!("non-finite iterate at t = {}", p.times[k])));
                    }
                    if change <= p.howard_tol * scale || iters >= p.howard_max_iter {
                        break;
                    }
                }
                howard_iterations = howard_iterations.max(iters);
                row[..n - 1].copy_from_slice(&current[..n - 1]);
                for i in 1..n - 1 {
                    fl[i] = controls[i].flags;
                }
            }
        }
    }
    Ok(StripSolution { values, flags, howard_iterations })
}

//! Pointwise maximisation of the HJB Hamiltonian
//!
//! ```text
//! H(p, q) = sup_{η ≤ C₀, z} [ ½ z² q + (λ e^{−λη} + ½ θ z²) p + θ z − η ]
//! ```
//!
//! over a clipped control box `η ∈ [η_min, C₀]`, `z ∈ [−z_max, z_max]`.
//!
//! Substituting `e = λ e^{−λη}` and `y = z²` makes the objective separable
//! and jointly concave in `(e, y)`, so the supremum has a closed form on the
//! box. The discrete scheme additionally upwinds the total drift
//! `s = e + ½θy − g` (with `g` the velocity of a moving grid node), which
//! splits the control box along the line `s = 0`. The supremum of the
//! piecewise objective is then the best of the two half-box optima and the
//! optimum on the line itself, each of which is a concave problem.

use bitflags::bitflags;
use serde::{Deserialize, Serialize};

bitflags! {
    /// Per-node diagnostics recorded by the solver and the policy extractor.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct NodeFlags: u8 {
        /// `q + θp ≥ 0`: the supremum over `z` is unbounded, `z = z_max` used.
        const Z_UNBOUNDED = 0b0000_0001;
        /// The interior optimiser `−θ/(q + θp)` exceeded `z_max`.
        const Z_CLIPPED = 0b0000_0010;
        /// The `η` supremum sits at `η_min` (`p ≥ 0` or interior optimiser below it).
        const ETA_CLIPPED = 0b0000_0100;
        /// Dirichlet node.
        const BOUNDARY = 0b0000_1000;
        /// Node closed by the analytic terminal layer.
        const TERMINAL_LAYER = 0b0001_0000;
    }
}

impl NodeFlags {
    pub const CLIPPING: NodeFlags = NodeFlags::Z_UNBOUNDED.union(NodeFlags::Z_CLIPPED).union(NodeFlags::ETA_CLIPPED);
}

/// Admissible control box used by the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub eta_min: f64,
    pub eta_max: f64,
    pub z_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianValue {
    pub value: f64,
    pub eta: f64,
    pub z: f64,
    pub flags: NodeFlags,
}

/// Discrete derivative information at one grid node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    /// Forward difference `(u_{i+1} − u_i)/h`.
    pub p_fwd: f64,
    /// Backward difference `(u_i − u_{i−1})/h`.
    pub p_bwd: f64,
    /// Second difference `(u_{i+1} − 2u_i + u_{i−1})/h²`.
    pub q: f64,
    /// Velocity of the grid node in physical coordinates.
    pub velocity: f64,
}

/// Control selected at a node together with the resulting upwind drift
/// `s = λe^{−λη} + ½θz² − velocity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeControl {
    pub eta: f64,
    pub z: f64,
    pub drift: f64,
    pub value: f64,
    pub flags: NodeFlags,
}

#[derive(Debug, Clone, Copy)]
struct Model {
    theta: f64,
    lambda: f64,
    e_lo: f64,
    e_hi: f64,
    z_max: f64,
}

impl Model {
    fn new(theta: f64, lambda: f64, bounds: &ControlBounds) -> Self {
        Self {
            theta,
            lambda,
            e_lo: lambda * (-lambda * bounds.eta_max).exp(),
            e_hi: lambda * (-lambda * bounds.eta_min).exp(),
            z_max: bounds.z_max,
        }
    }

    fn eta_of(&self, e: f64) -> f64 {
        -(e / self.lambda).ln() / self.lambda
    }

    /// Best `(e, z)` over the whole box when the drift is upwinded with slope `p`.
    fn box_optimum(&self, p: f64, q: f64) -> (f64, f64, NodeFlags) {
        let mut flags = NodeFlags::empty();
        let e = if p < 0.0 {
            let interior = -1.0 / (self.lambda * p);
            if interior >= self.e_hi {
                flags |= NodeFlags::ETA_CLIPPED;
                self.e_hi
            } else {
                interior.max(self.e_lo)
            }
        } else {
            flags |= NodeFlags::ETA_CLIPPED;
            self.e_hi
        };
        let a = q + self.theta * p;
        let z = if a < 0.0 {
            let interior = -self.theta / a;
            if interior > self.z_max {
                flags |= NodeFlags::Z_CLIPPED;
                self.z_max
            } else {
                interior
            }
        } else {
            flags |= NodeFlags::Z_UNBOUNDED;
            self.z_max
        };
        (e, z, flags)
    }

    fn objective(&self, st: &Stencil, e: f64, z: f64) -> (f64, f64) {
        let s = e + 0.5 * self.theta * z * z - st.velocity;
        let p = if s >= 0.0 { st.p_fwd } else { st.p_bwd };
        let value = 0.5 * z * z * st.q + s * p + self.theta * z - self.eta_of(e);
        (value, s)
    }

    /// Optimum on the line `e + ½θz² = velocity`, where the drift vanishes.
    fn line_optimum(&self, st: &Stencil) -> Option<(f64, f64)> {
        let g = st.velocity;
        let theta = self.theta;
        let y_lo = (2.0 * (g - self.e_hi) / theta).max(0.0);
        let y_hi = (2.0 * (g - self.e_lo) / theta).min(self.z_max * self.z_max);
        if !(y_lo <= y_hi) {
            return None;
        }
        let slope = |y: f64| {
            let root = y.sqrt();
            let grad_z = if root > 0.0 { theta / (2.0 * root) } else { f64::INFINITY };
            0.5 * st.q + grad_z - theta / (2.0 * self.lambda * (g - 0.5 * theta * y))
        };
        let y = if slope(y_hi) >= 0.0 {
            y_hi
        } else if y_lo > 0.0 && slope(y_lo) <= 0.0 {
            y_lo
        } else {
            // The line objective is strictly concave: safeguarded Newton on
            // its derivative, falling back to bisection steps.
            let curvature = |y: f64| {
                let e = g - 0.5 * theta * y;
                -theta / (4.0 * y * y.sqrt()) - theta * theta / (4.0 * self.lambda * e * e)
            };
            let (mut a, mut b) = (y_lo, y_hi);
            let mut y = 0.5 * (a + b);
            for _ in 0..100 {
                let d = slope(y);
                if d > 0.0 {
                    a = y;
                } else {
                    b = y;
                }
                if b - a <= 1e-15 * b.max(1e-300) {
                    break;
                }
                let step = y - d / curvature(y);
                let next = if step > a && step < b { step } else { 0.5 * (a + b) };
                if (next - y).abs() <= 1e-15 * y.max(1e-300) {
                    y = next;
                    break;
                }
                y = next;
            }
            y
        };
        let e = (g - 0.5 * theta * y).clamp(self.e_lo, self.e_hi);
        Some((e, y.sqrt()))
    }
}

/// Supremum of the Hamiltonian over the clipped control box, returning the
/// maximiser and degeneracy flags. When `q + θp < 0`, `p < 0` and no bound
/// binds this is the closed form `z* = −θ/(q+θp)`,
/// `η* = [−(1/λ) ln(−1/(λ²p))] ∧ C₀`.
pub fn hamiltonian(theta: f64, lambda: f64, bounds: &ControlBounds, p: f64, q: f64) -> HamiltonianValue {
    let model = Model::new(theta, lambda, bounds);
    let (e, z, flags) = model.box_optimum(p, q);
    let eta = model.eta_of(e);
    let value = 0.5 * z * z * q + (e + 0.5 * theta * z * z) * p + theta * z - eta;
    HamiltonianValue { value, eta, z, flags }
}

/// Reduced (control-free) form of the Hamiltonian, valid on
/// `{q + θp < 0, p < 0}` with unbounded `z` and `η ≤ C₀`.
pub fn reduced_hamiltonian(theta: f64, lambda: f64, payment_cap: f64, p: f64, q: f64) -> Option<f64> {
    let a = q + theta * p;
    if !(a < 0.0 && p < 0.0) {
        return None;
    }
    let threshold = -(lambda * payment_cap).exp() / (lambda * lambda);
    let eta_part = if p >= threshold {
        -1.0 / lambda + (-1.0 / (lambda * lambda * p)).ln() / lambda
    } else {
        lambda * (-lambda * payment_cap).exp() * p - payment_cap
    };
    Some(-theta * theta / (2.0 * a) + eta_part)
}

/// Exact supremum of the upwinded discrete Hamiltonian at one node.
pub fn local_sup(theta: f64, lambda: f64, bounds: &ControlBounds, st: &Stencil) -> NodeControl {
    let model = Model::new(theta, lambda, bounds);
    let mut best: Option<NodeControl> = None;
    let mut consider = |e: f64, z: f64, flags: NodeFlags| {
        let (value, drift) = model.objective(st, e, z);
        if best.is_none_or(|b| value > b.value) {
            best = Some(NodeControl { eta: model.eta_of(e), z, drift, value, flags });
        }
    };

    let (e_f, z_f, flags_f) = model.box_optimum(st.p_fwd, st.q);
    let fwd_feasible = e_f + 0.5 * theta * z_f * z_f - st.velocity >= 0.0;
    if fwd_feasible {
        consider(e_f, z_f, flags_f);
    }
    // With `velocity ≤ e_lo` the drift is non-negative for every control and
    // the forward-upwinded half is the whole box.
    if st.velocity > model.e_lo {
        let (e_b, z_b, flags_b) = model.box_optimum(st.p_bwd, st.q);
        let bwd_feasible = e_b + 0.5 * theta * z_b * z_b - st.velocity <= 0.0;
        if bwd_feasible {
            consider(e_b, z_b, flags_b);
        }
        // For p_fwd ≤ p_bwd the objective is the minimum of the two concave
        // branches, so a feasible branch optimum is already global.
        let line_needed = if st.p_fwd <= st.p_bwd {
            !(fwd_feasible || bwd_feasible)
        } else {
            !(fwd_feasible && bwd_feasible)
        };
        if line_needed {
            if let Some((e, z)) = model.line_optimum(st) {
                let mut flags = NodeFlags::empty();
                if e >= model.e_hi {
                    flags |= NodeFlags::ETA_CLIPPED;
                }
                if z >= model.z_max {
                    flags |= NodeFlags::Z_CLIPPED;
                }
                consider(e, z, flags);
            }
        }
    }
    match best {
        Some(b) => b,
        // Unreachable for a consistent box: the forward half is non-empty
        // whenever the backward half and the line are empty.
        None => {
            let (value, drift) = model.objective(st, e_f, z_f);
            NodeControl { eta: model.eta_of(e_f), z: z_f, drift, value, flags: flags_f }
        }
    }
}

//! Ready-made environments used by the CLI, the bundled configs and tests.

use crate::error::Result;
use crate::market::{AgentType, AgentTypeSet, MarketEnvironment, PiecewiseLinear};

pub const BASELINE_THETAS: [f64; 3] = [0.5, 1.0, 2.0];

/// λ ≡ 1, C₀ = 1, T = 1, R ≡ 2L̄, constant quit costs.
pub fn baseline_with(thetas: &[f64], quit_cost: f64, principal_cost: f64) -> Result<MarketEnvironment> {
    let (lambda, cap, horizon) = (1.0f64, 1.0, 1.0);
    let upper0 = -lambda * (-lambda * cap).exp() * horizon;
    let ir = PiecewiseLinear::new(vec![(0.0, 2.0 * upper0), (horizon, 0.0)])?;
    let types = thetas
        .iter()
        .map(|&theta| AgentType {
            theta,
            lambda,
            ir: ir.clone(),
            quit_cost: PiecewiseLinear::constant(quit_cost, horizon),
        })
        .collect();
    MarketEnvironment::new(
        AgentTypeSet::new(types)?,
        horizon,
        cap,
        PiecewiseLinear::constant(principal_cost, horizon),
        None,
        None,
        200,
    )
}

pub fn baseline() -> MarketEnvironment {
    baseline_with(&BASELINE_THETAS, 0.1, 0.05).expect("baseline environment is well formed")
}

pub fn baseline_single() -> MarketEnvironment {
    baseline_with(&[1.0], 0.1, 0.05).expect("baseline environment is well formed")
}

/// One type whose outside option starts far below the agent's reach and
/// climbs to zero, with a free re-hire: the principal lets agents walk and
/// restarts them, so chains see several quits per path.
pub fn low_cost() -> MarketEnvironment {
    let horizon = 1.0;
    let build = || -> Result<MarketEnvironment> {
        let ty = AgentType {
            theta: 1.0,
            lambda: 1.0,
            ir: PiecewiseLinear::new(vec![(0.0, -10.0), (horizon, 0.0)])?,
            quit_cost: PiecewiseLinear::constant(0.1, horizon),
        };
        MarketEnvironment::new(
            AgentTypeSet::new(vec![ty])?,
            horizon,
            1.0,
            PiecewiseLinear::constant(0.0, horizon),
            None,
            None,
            200,
        )
    };
    build().expect("low-cost environment is well formed")
}

/// Two-type market where the outside option of the weaker type collapses
/// before mid-horizon, so letting the first agent quit pays off.
#[derive(Debug, Clone)]
pub struct QuitGainExample {
    pub env: MarketEnvironment,
    /// Type hired at time 0.
    pub theta0: f64,
    /// Type whose outside option drops.
    pub theta1: f64,
    pub x0: f64,
    pub market_drop: f64,
    /// Closed-form lower bound on `u₁(θ₀; 0, x₀)`.
    pub bound: f64,
    /// Payment level that carries a `θ₁` agent from `R^{θ₁}_{½}` to zero at `T`.
    pub rescue_eta: f64,
}

pub fn quit_gain_example(payment_cap: f64, market_drop: f64) -> Result<QuitGainExample> {
    let e = (-payment_cap).exp();
    let x0 = -2.0 * e;
    let n = market_drop;
    let (theta1, theta0) = (0.5, 1.0);
    let r0 = PiecewiseLinear::new(vec![(0.0, x0), (0.5, x0 + 1.5 * e), (1.0, 0.0)])?;
    let r1 = PiecewiseLinear::new(vec![(0.0, x0), (0.5, x0 - 0.5 * n), (1.0, 0.0)])?;
    let cost = PiecewiseLinear::constant(e, 1.0);
    let types = vec![
        AgentType { theta: theta1, lambda: 1.0, ir: r1, quit_cost: cost.clone() },
        AgentType { theta: theta0, lambda: 1.0, ir: r0, quit_cost: cost },
    ];
    let env = MarketEnvironment::new(
        AgentTypeSet::new(types)?,
        1.0,
        payment_cap,
        PiecewiseLinear::constant(0.0, 1.0),
        None,
        None,
        200,
    )?;
    let bound = 0.5 * (n + 4.0 * e).ln() - 0.5 * payment_cap;
    Ok(QuitGainExample { env, theta0, theta1, x0, market_drop: n, bound, rescue_eta: -(n + 4.0 * e).ln() })
}

//! Agent-side value of a deterministic contract with the option to quit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketEnvironment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentValue {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    /// Smallest optimal quitting time, `T` if the agent never quits.
    pub quit_time: f64,
}

/// Reflected backward recursion `Y_T = 0`,
/// `Y_k = max(L̲_k, Y_{k+1} − λ e^{−λ η} Δ)` on a uniform grid, with `η`
/// read at step midpoints so payment curves that jump on grid nodes are
/// integrated exactly.
pub fn agent_value_backward(
    env: &MarketEnvironment,
    theta: f64,
    eta: impl Fn(f64) -> f64,
    n_steps: usize,
) -> Result<AgentValue> {
    let idx = env.type_index(theta)?;
    if n_steps == 0 {
        return Err(Error::Config("agent recursion needs at least one step".into()));
    }
    let lambda = env.lambda(idx);
    let horizon = env.horizon;
    let dt = horizon / n_steps as f64;
    let times: Vec<f64> = (0..=n_steps).map(|k| if k == n_steps { horizon } else { k as f64 * dt }).collect();
    let mut y = vec![0.0; n_steps + 1];
    let mut binding = vec![false; n_steps + 1];
    for k in (0..n_steps).rev() {
        let mid = 0.5 * (times[k] + times[k + 1]);
        let pay = eta(mid);
        if !(pay <= env.payment_cap) {
            return Err(Error::Admissibility(format!(
                "payment {pay} at t = {mid} exceeds the cap {}",
                env.payment_cap
            )));
        }
        let cont = y[k + 1] - lambda * (-lambda * pay).exp() * (times[k + 1] - times[k]);
        let obstacle = env.lower_at(idx, times[k]);
        if cont <= obstacle {
            y[k] = obstacle;
            binding[k] = true;
        } else {
            y[k] = cont;
        }
    }
    let quit_time = binding.iter().position(|&b| b).map_or(horizon, |k| times[k]);
    Ok(AgentValue { times, y, quit_time })
}

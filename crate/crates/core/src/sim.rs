//! Forward simulation of contract chains under the effort-tilted measure.
//!
//! Every path draws from its own ChaCha8 stream (`seed`, `stream = path
//! index`), and per-path results are reduced in path order, so estimates do
//! not depend on the number of workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketEnvironment;
use crate::policy::PolicyField;
use crate::recursion::{best_principal_value, principal_value, SurfaceFamily};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Start {
    pub theta: f64,
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ContractRule {
    /// Extracted feedback policy, liquidation contract inside the terminal layer.
    Feedback,
    /// Constant `(η, z)` over the whole horizon.
    Fixed { eta: f64, z: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub seed: u64,
    pub stream: u64,
    /// Quit times strictly before `T`.
    pub quit_times: Vec<f64>,
    /// Type in charge from the start and after each quit.
    pub hired_types: Vec<f64>,
    /// `(s, X_s)` samples, empty unless path recording is on.
    pub utility_path: Vec<(f64, f64)>,
    pub payoff: f64,
    pub quit_count: usize,
    pub terminal_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub n_paths: usize,
    pub mean: f64,
    pub stderr: f64,
    /// `quit_histogram[n]` paths saw exactly `n` quits.
    pub quit_histogram: Vec<u64>,
    pub mean_terminal_gap: f64,
    #[serde(skip)]
    pub records: Vec<ChainRecord>,
}

impl ValueEstimate {
    /// Empirical `P(quit_count ≥ n)`.
    pub fn tail(&self, n: usize) -> f64 {
        let count: u64 = self.quit_histogram.iter().skip(n).sum();
        count as f64 / self.n_paths as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppReport {
    pub theta: f64,
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub target: f64,
    pub residual: f64,
    pub quit_fraction: f64,
    pub n_paths: usize,
}

#[derive(Debug, Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut acc = Kahan::default();
    values.iter().for_each(|&v| acc.add(v));
    let mean = acc.sum / n;
    let mut sq = Kahan::default();
    values.iter().for_each(|&v| sq.add((v - mean) * (v - mean)));
    let var = if values.len() > 1 { sq.sum / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

pub fn run_in_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

pub struct ChainSimulator<'a> {
    env: &'a MarketEnvironment,
    family: &'a SurfaceFamily,
    policies: &'a [PolicyField],
    steps: usize,
    contract: ContractRule,
    record_path: bool,
    eps_term: f64,
    refine: bool,
}

/// Substep cap near the quit barrier: `z √h ≤ GAP_FRACTION · (X − L̲)`.
const GAP_FRACTION: f64 = 0.25;
/// Smallest substep as a fraction of the base step.
const MIN_SUBSTEP: f64 = 1.0 / 4096.0;

impl<'a> ChainSimulator<'a> {
    /// `policies[i]` must belong to type `i` of the environment.
    pub fn new(
        env: &'a MarketEnvironment,
        family: &'a SurfaceFamily,
        policies: &'a [PolicyField],
        steps: usize,
    ) -> Result<Self> {
        if policies.len() != env.types.len() {
            return Err(Error::Config(format!(
                "{} policy fields for {} types",
                policies.len(),
                env.types.len()
            )));
        }
        for (p, ty) in policies.iter().zip(env.types.iter()) {
            if p.theta != ty.theta {
                return Err(Error::Config(format!("policy for theta = {} is out of order", p.theta)));
            }
        }
        if steps == 0 {
            return Err(Error::Config("simulation needs at least one step".into()));
        }
        let eps_term = policies[0].eps_term;
        let ds = env.horizon / steps as f64;
        if eps_term > 0.0 && ds > eps_term * (1.0 + 1e-9) {
            return Err(Error::Config(format!(
                "simulation step {ds:.3e} exceeds the terminal layer width {eps_term:.3e}; increase steps"
            )));
        }
        Ok(Self { env, family, policies, steps, contract: ContractRule::Feedback, record_path: false, eps_term, refine: true })
    }

    pub fn with_contract(mut self, contract: ContractRule) -> Self {
        self.contract = contract;
        self
    }

    /// Shorten steps whose diffusion reaches across the gap to the quit
    /// barrier (on by default). Plain Euler steps overstate quitting when the
    /// policy switches volatility off in a thin layer above the barrier.
    pub fn with_barrier_substeps(mut self, on: bool) -> Self {
        self.refine = on;
        self
    }

    pub fn with_path_recording(mut self, on: bool) -> Self {
        self.record_path = on;
        self
    }

    pub fn simulate_chain(&self, start: Start, seed: u64, stream: u64) -> Result<ChainRecord> {
        self.run(start, seed, stream, false)
    }

    fn run(&self, start: Start, seed: u64, stream: u64, stop_at_first_quit: bool) -> Result<ChainRecord> {
        let env = self.env;
        let horizon = env.horizon;
        let mut idx = env.type_index(start.theta)?;
        if !env.contains_at(idx, start.t, start.x) {
            return Err(Error::Domain(format!(
                "start (theta = {}, t = {}, x = {}) is outside the quit domain",
                start.theta, start.t, start.x
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);

        let ds = horizon / self.steps as f64;
        let tol = 1e-12 * horizon;
        let mut s = start.t;
        let mut x = start.x;
        let mut payoff = 0.0;
        let mut quit_times = Vec::new();
        let mut hired_types = vec![start.theta];
        let mut utility_path = Vec::new();
        let mut layer_eta: Option<f64> = None;
        if self.record_path {
            utility_path.push((s, x));
        }

        while s < horizon - tol {
            let node = ((s + tol) / ds).floor() + 1.0;
            let mut s_next = (node * ds).min(horizon);
            let theta = env.theta(idx);
            let lambda = env.lambda(idx);
            let (eta, z) = match self.contract {
                ContractRule::Fixed { eta, z } => (eta, z),
                ContractRule::Feedback => {
                    if horizon - s <= self.eps_term + tol {
                        let eta = *layer_eta.get_or_insert_with(|| {
                            (-(-x / ((horizon - s) * lambda)).ln() / lambda).min(env.payment_cap)
                        });
                        (eta, 0.0)
                    } else {
                        self.policies[idx].control_at(s, x)?
                    }
                }
            };
            let drift = lambda * (-lambda * eta).exp() + 0.5 * theta * z * z;
            if self.refine && z > 0.0 {
                let gap = (x - env.lower_at(idx, s)).max(0.0);
                let cap = (GAP_FRACTION * gap / z).powi(2).max(MIN_SUBSTEP * ds);
                if s + cap < s_next - tol {
                    s_next = s + cap;
                }
            }
            let h = s_next - s;
            let normal: f64 = rng.sample(StandardNormal);
            let mut x_new = x + drift * h + z * h.sqrt() * normal;
            x_new = x_new.min(env.upper_at(idx, s_next));
            let flow = theta * z - eta;

            let lo_s = env.lower_at(idx, s);
            let lo_n = env.lower_at(idx, s_next);
            if x_new <= lo_n {
                let gap0 = x - lo_s;
                let gap1 = x_new - lo_n;
                let a = if gap0 - gap1 > 0.0 { (gap0 / (gap0 - gap1)).clamp(0.0, 1.0) } else { 1.0 };
                let tau = s + a * h;
                payoff += flow * a * h;
                if tau < horizon - tol {
                    quit_times.push(tau);
                    payoff -= env.principal_cost_at(tau);
                    if self.record_path {
                        utility_path.push((tau, lo_s + a * (lo_n - lo_s)));
                    }
                    if stop_at_first_quit {
                        return Ok(ChainRecord {
                            seed,
                            stream,
                            quit_count: quit_times.len(),
                            quit_times,
                            hired_types,
                            utility_path,
                            payoff,
                            terminal_gap: f64::NAN,
                        });
                    }
                    let (next, _) = best_principal_value(self.family, tau, env)?;
                    idx = next;
                    hired_types.push(env.theta(idx));
                    x = env.ir_at(idx, tau);
                    s = tau;
                    layer_eta = None;
                    if self.record_path {
                        utility_path.push((s, x));
                    }
                    continue;
                }
                x = lo_n;
                break;
            }
            payoff += flow * h;
            x = x_new;
            s = s_next;
            if self.record_path {
                utility_path.push((s, x));
            }
        }
        Ok(ChainRecord {
            seed,
            stream,
            quit_count: quit_times.len(),
            quit_times,
            hired_types,
            utility_path,
            payoff,
            terminal_gap: x.abs(),
        })
    }

    fn run_many(&self, start: Start, n_paths: usize, seed: u64, workers: Option<usize>, first_quit: bool) -> Result<Vec<ChainRecord>> {
        if n_paths < 2 {
            return Err(Error::Config(format!("need at least 2 paths, got {n_paths}")));
        }
        run_in_pool(workers, || {
            (0..n_paths as u64)
                .into_par_iter()
                .map(|path| self.run(start, seed, path, first_quit))
                .collect::<Result<Vec<_>>>()
        })?
    }

    pub fn estimate_value(&self, start: Start, n_paths: usize, seed: u64, workers: Option<usize>) -> Result<ValueEstimate> {
        let records = self.run_many(start, n_paths, seed, workers, false)?;
        let payoffs: Vec<f64> = records.iter().map(|r| r.payoff).collect();
        let (mean, stderr) = mean_and_stderr(&payoffs);
        let max_quits = records.iter().map(|r| r.quit_count).max().unwrap_or(0);
        let mut quit_histogram = vec![0u64; max_quits + 1];
        for r in &records {
            quit_histogram[r.quit_count] += 1;
        }
        let gaps: Vec<f64> = records.iter().map(|r| r.terminal_gap).collect();
        let (mean_terminal_gap, _) = mean_and_stderr(&gaps);
        Ok(ValueEstimate { n_paths, mean, stderr, quit_histogram, mean_terminal_gap, records })
    }

    /// Payoff up to the first quit plus the restart value read from the
    /// family, compared with `V^P(θ; t)`.
    pub fn dpp_check(&self, theta: f64, t: f64, n_paths: usize, seed: u64, workers: Option<usize>) -> Result<DppReport> {
        let env = self.env;
        let idx = env.type_index(theta)?;
        let start = Start { theta, t, x: env.ir_at(idx, t) };
        let records = self.run_many(start, n_paths, seed, workers, true)?;
        let mut quits = 0usize;
        let values = records
            .iter()
            .map(|r| match r.quit_times.first() {
                Some(&tau) => {
                    quits += 1;
                    Ok(r.payoff + best_principal_value(self.family, tau, env)?.1)
                }
                None => Ok(r.payoff),
            })
            .collect::<Result<Vec<f64>>>()?;
        let (estimate, stderr) = mean_and_stderr(&values);
        let target = principal_value(self.family, theta, t, env)?;
        Ok(DppReport {
            theta,
            t,
            estimate,
            stderr,
            target,
            residual: (estimate - target).abs(),
            quit_fraction: quits as f64 / n_paths as f64,
            n_paths,
        })
    }
}

//! TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hjb::{SolverGrid, Stepping};
use crate::market::{AgentType, AgentTypeSet, MarketEnvironment, PiecewiseLinear};

/// A curve given either as a constant or as `[t, value]` breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CurveSpec {
    Constant(f64),
    Points(Vec<[f64; 2]>),
}

impl CurveSpec {
    pub fn to_curve(&self, horizon: f64) -> Result<PiecewiseLinear> {
        match self {
            CurveSpec::Constant(v) => {
                if !v.is_finite() {
                    return Err(Error::Config(format!("constant curve value {v} is not finite")));
                }
                Ok(PiecewiseLinear::constant(*v, horizon))
            }
            CurveSpec::Points(p) => PiecewiseLinear::new(p.iter().map(|&[t, v]| (t, v)).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeConfig {
    pub theta: f64,
    pub lambda: f64,
    pub ir: CurveSpec,
    pub quit_cost: CurveSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub horizon: f64,
    pub payment_cap: f64,
    pub principal_quit_cost: CurveSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default = "default_validation_steps")]
    pub validation_steps: usize,
    pub types: Vec<TypeConfig>,
}

fn default_validation_steps() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub n_time: usize,
    pub n_space: usize,
    #[serde(default = "default_depth")]
    pub x_min_depth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_term: Option<f64>,
    pub tol: f64,
    pub n_max: usize,
    #[serde(default)]
    pub stepping: Stepping,
}

fn default_depth() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Types to start chains from; all types when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_thetas: Option<Vec<f64>>,
    /// Start time of simulated chains and of the dynamic-programming check.
    #[serde(default)]
    pub start_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_directory() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: default_directory(), formats: default_formats() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub environment: EnvironmentConfig,
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(format!("config serialisation: {e}")))
    }

    pub fn check(&self) -> Result<()> {
        let s = &self.solver;
        if s.n_time < 2 || s.n_space < 3 {
            return Err(Error::Config(format!(
                "solver needs n_time >= 2 and n_space >= 3, got {} and {}",
                s.n_time, s.n_space
            )));
        }
        if !(s.tol > 0.0) {
            return Err(Error::Config(format!("solver.tol must be positive, got {}", s.tol)));
        }
        if s.n_max == 0 {
            return Err(Error::Config("solver.n_max must be at least 1".into()));
        }
        for (name, v) in [("z_max", s.z_max), ("eps_term", s.eps_term)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("solver.{name} must be positive, got {v}")));
                }
            }
        }
        if !(s.x_min_depth >= 1.0) {
            return Err(Error::Config(format!("solver.x_min_depth must be >= 1, got {}", s.x_min_depth)));
        }
        let m = &self.simulation;
        if m.n_paths < 2 {
            return Err(Error::Config(format!("simulation.n_paths must be >= 2, got {}", m.n_paths)));
        }
        if m.steps == 0 {
            return Err(Error::Config("simulation.steps must be positive".into()));
        }
        if m.workers == Some(0) {
            return Err(Error::Config("simulation.workers must be positive".into()));
        }
        if self.output.formats.is_empty() {
            return Err(Error::Config("output.formats is empty".into()));
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<MarketEnvironment> {
        let e = &self.environment;
        let types = e
            .types
            .iter()
            .map(|t| {
                Ok(AgentType {
                    theta: t.theta,
                    lambda: t.lambda,
                    ir: t.ir.to_curve(e.horizon)?,
                    quit_cost: t.quit_cost.to_curve(e.horizon)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MarketEnvironment::new(
            AgentTypeSet::new(types)?,
            e.horizon,
            e.payment_cap,
            e.principal_quit_cost.to_curve(e.horizon)?,
            e.c0_floor,
            e.lipschitz,
            e.validation_steps,
        )
    }

    /// Solver grid after `refine` halvings of `Δt` and `Δξ`.
    pub fn grid(&self, refine: u32) -> SolverGrid {
        let s = &self.solver;
        let mut g = SolverGrid::new(s.n_time, s.n_space);
        g.x_min_depth = s.x_min_depth;
        g.z_max = s.z_max;
        g.eta_min = s.eta_min;
        g.eps_term = s.eps_term;
        g.stepping = s.stepping;
        g.refined(refine)
    }

    /// Simulation steps after `refine` halvings of `Δs`.
    pub fn sim_steps(&self, refine: u32) -> usize {
        self.simulation.steps << refine
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    /// Worker count and output settings do not affect results and are left out.
    pub fn hash(&self) -> String {
        let mut inputs = self.clone();
        inputs.simulation.workers = None;
        inputs.output = OutputConfig::default();
        let canonical = serde_json::to_vec(&inputs).expect("config is always serialisable");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn wants(&self, format: Format) -> bool {
        self.output.formats.contains(&format)
    }

    /// Config whose environment is replaced by `env` (used for generated markets).
    pub fn with_environment(&self, env: &MarketEnvironment) -> Self {
        let points = |c: &PiecewiseLinear| CurveSpec::Points(c.points().iter().map(|&(t, v)| [t, v]).collect());
        let mut cfg = self.clone();
        cfg.environment = EnvironmentConfig {
            horizon: env.horizon,
            payment_cap: env.payment_cap,
            principal_quit_cost: points(&env.principal_quit_cost),
            c0_floor: Some(env.c0_floor),
            lipschitz: env.lipschitz,
            validation_steps: env.time_steps,
            types: env
                .types
                .iter()
                .map(|t| TypeConfig { theta: t.theta, lambda: t.lambda, ir: points(&t.ir), quit_cost: points(&t.quit_cost) })
                .collect(),
        };
        cfg
    }
}

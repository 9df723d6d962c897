//! Exogenous market data: agent types, the individual-rationality and quit-cost
//! curves, and the two barriers that bound the agent's continuation utility.
//!
//! All time-dependent data is piecewise linear in `t`. The upper barrier is
//! the utility of the constant maximal contract `η ≡ C₀`,
//! `L̄ᶿ_t = −λ(θ) e^{−λ(θ) C₀} (T − t)`; the lower barrier is the quit trigger
//! `L̲ᶿ_t = Rᶿ_t − cᶿ_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when checking inequalities that may hold with equality.
const CHECK_TOL: f64 = 1e-12;

/// A continuous piecewise-linear curve on `[t_first, t_last]`, held constant
/// outside that range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("curve needs at least one breakpoint".into()));
        }
        for &(t, v) in &points {
            if !t.is_finite() || !v.is_finite() {
                return Err(Error::Config(format!("non-finite breakpoint ({t}, {v})")));
            }
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config("breakpoint times must be strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn constant(value: f64, horizon: f64) -> Self {
        Self { points: vec![(0.0, value), (horizon, value)] }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        // first breakpoint strictly after t
        let hi = pts.partition_point(|&(s, _)| s <= t);
        let (t0, v0) = pts[hi - 1];
        let (t1, v1) = pts[hi];
        if t == t0 {
            return v0;
        }
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { points: self.points.iter().map(|&(t, v)| (t, v * factor)).collect() }
    }

    fn first_time(&self) -> f64 {
        self.points[0].0
    }

    fn last_time(&self) -> f64 {
        self.points[self.points.len() - 1].0
    }
}

/// One agent type: quality `θ`, risk aversion `λ(θ)`, IR curve `Rᶿ` and quit
/// cost `cᶿ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentType {
    pub theta: f64,
    pub lambda: f64,
    pub ir: PiecewiseLinear,
    pub quit_cost: PiecewiseLinear,
}

/// Ordered, finite set of agent types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTypeSet {
    types: Vec<AgentType>,
}

impl AgentTypeSet {
    pub fn new(types: Vec<AgentType>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::Config("type set is empty".into()));
        }
        for ty in &types {
            if !(ty.theta > 0.0 && ty.theta.is_finite()) {
                return Err(Error::Config(format!("theta must be positive and finite, got {}", ty.theta)));
            }
        }
        if types.windows(2).any(|w| w[1].theta <= w[0].theta) {
            return Err(Error::Config("theta values must be strictly increasing".into()));
        }
        Ok(Self { types })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, index: usize) -> &AgentType {
        &self.types[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &AgentType> {
        self.types.iter()
    }

    pub fn theta_values(&self) -> Vec<f64> {
        self.types.iter().map(|t| t.theta).collect()
    }

    pub fn index_of(&self, theta: f64) -> Result<usize> {
        self.types.iter().position(|t| t.theta == theta).ok_or(Error::UnknownType(theta))
    }

    pub fn lambda_bounds(&self) -> (f64, f64) {
        self.types.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            (lo.min(t.lambda), hi.max(t.lambda))
        })
    }

    pub fn theta_max(&self) -> f64 {
        self.types[self.types.len() - 1].theta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketEnvironment {
    pub types: AgentTypeSet,
    pub horizon: f64,
    pub payment_cap: f64,
    pub principal_quit_cost: PiecewiseLinear,
    /// Quit-cost floor `c₀`.
    pub c0_floor: f64,
    /// Configured Lipschitz bound for the lower barriers; `None` means "use the
    /// measured slope".
    pub lipschitz: Option<f64>,
    /// Number of uniform steps of the validation time grid.
    pub time_steps: usize,
}

impl MarketEnvironment {
    pub fn new(
        types: AgentTypeSet,
        horizon: f64,
        payment_cap: f64,
        principal_quit_cost: PiecewiseLinear,
        c0_floor: Option<f64>,
        lipschitz: Option<f64>,
        time_steps: usize,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if !payment_cap.is_finite() {
            return Err(Error::Config("payment cap must be finite".into()));
        }
        if time_steps < 1 {
            return Err(Error::Config("validation time grid needs at least one step".into()));
        }
        let c0_floor = c0_floor.unwrap_or_else(|| {
            types
                .iter()
                .flat_map(|ty| ty.quit_cost.points().iter().map(|p| p.1))
                .fold(f64::INFINITY, f64::min)
        });
        Ok(Self { types, horizon, payment_cap, principal_quit_cost, c0_floor, lipschitz, time_steps })
    }

    pub fn type_index(&self, theta: f64) -> Result<usize> {
        self.types.index_of(theta)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// `L̄ᶿ_t = −λ e^{−λ C₀} (T − t)`.
    pub fn upper_barrier(&self, theta: f64, t: f64) -> Result<f64> {
        let idx = self.type_index(theta)?;
        self.check_time(t)?;
        Ok(self.upper_at(idx, t))
    }

    /// `L̲ᶿ_t = Rᶿ_t − cᶿ_t`.
    pub fn lower_barrier(&self, theta: f64, t: f64) -> Result<f64> {
        let idx = self.type_index(theta)?;
        self.check_time(t)?;
        Ok(self.lower_at(idx, t))
    }

    pub fn upper_at(&self, idx: usize, t: f64) -> f64 {
        let lambda = self.types.get(idx).lambda;
        -lambda * (-lambda * self.payment_cap).exp() * (self.horizon - t)
    }

    /// Time derivative of the upper barrier, `λ e^{−λ C₀}`.
    pub fn upper_slope(&self, idx: usize) -> f64 {
        let lambda = self.types.get(idx).lambda;
        lambda * (-lambda * self.payment_cap).exp()
    }

    pub fn lower_at(&self, idx: usize, t: f64) -> f64 {
        let ty = self.types.get(idx);
        ty.ir.eval(t) - ty.quit_cost.eval(t)
    }

    pub fn ir_at(&self, idx: usize, t: f64) -> f64 {
        self.types.get(idx).ir.eval(t)
    }

    pub fn principal_cost_at(&self, t: f64) -> f64 {
        self.principal_quit_cost.eval(t)
    }

    pub fn lambda(&self, idx: usize) -> f64 {
        self.types.get(idx).lambda
    }

    pub fn theta(&self, idx: usize) -> f64 {
        self.types.get(idx).theta
    }

    /// `true` iff `0 ≤ t < T` and `L̲ᶿ_t < x ≤ L̄ᶿ_t`.
    pub fn domain_contains(&self, theta: f64, t: f64, x: f64) -> Result<bool> {
        let idx = self.type_index(theta)?;
        Ok(self.contains_at(idx, t, x))
    }

    pub fn contains_at(&self, idx: usize, t: f64, x: f64) -> bool {
        (0.0..self.horizon).contains(&t) && self.lower_at(idx, t) < x && x <= self.upper_at(idx, t)
    }

    /// Time nodes on which assumptions are checked: the uniform validation
    /// grid together with every breakpoint of every curve.
    fn check_nodes(&self, idx: usize) -> Vec<f64> {
        let ty = self.types.get(idx);
        let mut nodes: Vec<f64> = (0..=self.time_steps)
            .map(|k| self.horizon * k as f64 / self.time_steps as f64)
            .collect();
        for curve in [&ty.ir, &ty.quit_cost, &self.principal_quit_cost] {
            nodes.extend(curve.points().iter().map(|p| p.0).filter(|t| (0.0..=self.horizon).contains(t)));
        }
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        nodes
    }

    /// Largest slope of `L̲ᶿ` over all types; exact for piecewise-linear data.
    pub fn measured_lipschitz(&self) -> f64 {
        (0..self.types.len())
            .map(|idx| {
                let nodes = self.check_nodes(idx);
                nodes
                    .windows(2)
                    .map(|w| (self.lower_at(idx, w[1]) - self.lower_at(idx, w[0])).abs() / (w[1] - w[0]))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let (lambda_lower, lambda_upper) = self.types.lambda_bounds();
        let lipschitz_measured = self.measured_lipschitz();
        let horizon = self.horizon;
        let covers = |c: &PiecewiseLinear| {
            c.first_time() <= CHECK_TOL * horizon && c.last_time() >= horizon * (1.0 - CHECK_TOL)
        };

        if !(self.payment_cap.is_finite()) {
            violations.push(Violation::global(ViolationKind::NonFinite, "payment cap"));
        }
        if !(self.c0_floor > 0.0) {
            violations.push(Violation::global(
                ViolationKind::QuitCostFloor,
                format!("quit-cost floor c0 = {} must be positive", self.c0_floor),
            ));
        }
        if !covers(&self.principal_quit_cost) {
            violations.push(Violation::global(ViolationKind::Coverage, "principal quit cost"));
        }
        if let Some(lip) = self.lipschitz {
            if lipschitz_measured > lip * (1.0 + CHECK_TOL) {
                violations.push(Violation::global(
                    ViolationKind::Lipschitz,
                    format!("measured slope {lipschitz_measured} exceeds configured bound {lip}"),
                ));
            }
        }

        for (idx, ty) in self.types.iter().enumerate() {
            let theta = ty.theta;
            if !(ty.lambda > 0.0 && ty.lambda.is_finite()) {
                violations.push(Violation::at(
                    ViolationKind::RiskAversion,
                    theta,
                    None,
                    format!("lambda = {} must lie in (0, inf)", ty.lambda),
                ));
                continue;
            }
            if !covers(&ty.ir) {
                violations.push(Violation::at(ViolationKind::Coverage, theta, None, "IR curve"));
            }
            if !covers(&ty.quit_cost) {
                violations.push(Violation::at(ViolationKind::Coverage, theta, None, "quit-cost curve"));
            }
            let r_terminal = ty.ir.eval(horizon);
            if r_terminal.abs() > CHECK_TOL {
                violations.push(Violation::at(
                    ViolationKind::TerminalIr,
                    theta,
                    Some(horizon),
                    format!("R_T = {r_terminal}, expected 0"),
                ));
            }
            for t in self.check_nodes(idx) {
                let r = ty.ir.eval(t);
                let upper = self.upper_at(idx, t);
                if r > upper + CHECK_TOL * upper.abs().max(1.0) {
                    violations.push(Violation::at(
                        ViolationKind::IrAboveUpper,
                        theta,
                        Some(t),
                        format!("IR above upper barrier: R = {r} > {upper}"),
                    ));
                }
                let c = ty.quit_cost.eval(t);
                if c < self.c0_floor || c <= 0.0 {
                    violations.push(Violation::at(
                        ViolationKind::QuitCostFloor,
                        theta,
                        Some(t),
                        format!("quit cost below c0 floor: c = {c} < {}", self.c0_floor),
                    ));
                }
                let cp = self.principal_cost_at(t);
                if cp < 0.0 {
                    violations.push(Violation::at(
                        ViolationKind::PrincipalCost,
                        theta,
                        Some(t),
                        format!("principal quit cost negative: {cp}"),
                    ));
                }
            }
        }

        ValidationReport {
            passed: violations.is_empty(),
            lambda_lower,
            lambda_upper,
            c0_floor: self.c0_floor,
            lipschitz_measured,
            violations,
        }
    }

    /// Validate and turn a failing report into [`Error::Blocked`].
    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.passed {
            Ok(())
        } else {
            Err(Error::Blocked(report))
        }
    }

    /// Same environment with every agent quit cost and the principal's quit
    /// cost multiplied by `factor`.
    pub fn with_scaled_quit_costs(&self, factor: f64) -> Self {
        let types = self
            .types
            .iter()
            .map(|ty| AgentType { quit_cost: ty.quit_cost.scaled(factor), ..ty.clone() })
            .collect();
        Self {
            types: AgentTypeSet { types },
            principal_quit_cost: self.principal_quit_cost.scaled(factor),
            c0_floor: self.c0_floor * factor,
            ..self.clone()
        }
    }

    /// Environment restricted to a single type.
    pub fn single_type(&self, idx: usize) -> Self {
        Self {
            types: AgentTypeSet { types: vec![self.types.get(idx).clone()] },
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    RiskAversion,
    IrAboveUpper,
    TerminalIr,
    QuitCostFloor,
    PrincipalCost,
    Lipschitz,
    Coverage,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub theta: Option<f64>,
    pub t: Option<f64>,
    pub detail: String,
}

impl Violation {
    fn global(kind: ViolationKind, detail: impl Into<String>) -> Self {
        Self { kind, theta: None, t: None, detail: detail.into() }
    }

    fn at(kind: ViolationKind, theta: f64, t: Option<f64>, detail: impl Into<String>) -> Self {
        Self { kind, theta: Some(theta), t, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    pub c0_floor: f64,
    pub lipschitz_measured: f64,
    pub violations: Vec<Violation>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env_with(lambda: f64, ir: PiecewiseLinear, c: PiecewiseLinear) -> MarketEnvironment {
        let ty = AgentType { theta: 1.0, lambda, ir, quit_cost: c };
        MarketEnvironment::new(
            AgentTypeSet::new(vec![ty]).unwrap(),
            1.0,
            1.0,
            PiecewiseLinear::constant(0.05, 1.0),
            None,
            None,
            100,
        )
        .unwrap()
    }

    fn doubled_upper(lambda: f64) -> PiecewiseLinear {
        let l0 = -lambda * (-lambda).exp();
        PiecewiseLinear::new(vec![(0.0, 2.0 * l0), (1.0, 0.0)]).unwrap()
    }

    #[test]
    fn upper_barrier_values() {
        let env = env_with(1.0, doubled_upper(1.0), PiecewiseLinear::constant(0.1, 1.0));
        assert!((env.upper_barrier(1.0, 0.0).unwrap() + (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(env.upper_barrier(1.0, 1.0).unwrap(), 0.0);
        let env2 = env_with(2.0, doubled_upper(2.0), PiecewiseLinear::constant(0.1, 1.0));
        assert!((env2.upper_barrier(1.0, 0.5).unwrap() + (-2.0f64).exp()).abs() < 1e-15);
        assert!(matches!(env.upper_barrier(3.0, 0.0), Err(Error::UnknownType(_))));
    }

    #[test]
    fn lower_barrier_values() {
        let ir = PiecewiseLinear::new(vec![(0.0, -0.5), (1.0, 0.0)]).unwrap();
        let env = env_with(1.0, ir, PiecewiseLinear::constant(0.1, 1.0));
        assert!((env.lower_barrier(1.0, 0.0).unwrap() + 0.6).abs() < 1e-15);
        assert!((env.lower_barrier(1.0, 1.0).unwrap() + 0.1).abs() < 1e-15);
        let env = env_with(
            1.0,
            PiecewiseLinear::constant(-0.4, 1.0),
            PiecewiseLinear::constant(0.2, 1.0),
        );
        for t in [0.0, 0.3, 0.9] {
            assert!((env.lower_barrier(1.0, t).unwrap() + 0.6).abs() < 1e-15);
        }
    }

    #[test]
    fn well_formed_config_passes() {
        let env = env_with(1.0, doubled_upper(1.0), PiecewiseLinear::constant(0.1, 1.0));
        let report = env.validate();
        assert!(report.passed, "{:?}", report.violations);
        assert!((report.lipschitz_measured - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn zero_quit_cost_is_flagged() {
        let env = env_with(1.0, doubled_upper(1.0), PiecewiseLinear::constant(0.0, 1.0));
        let report = env.validate();
        assert!(!report.passed);
        assert!(report.violations.iter().any(|v| v.kind == ViolationKind::QuitCostFloor));
        assert!(matches!(env.ensure_valid(), Err(Error::Blocked(_))));
    }

    #[test]
    fn ir_above_upper_is_flagged_with_witness() {
        let ir = PiecewiseLinear::new(vec![(0.0, -0.1), (1.0, 0.0)]).unwrap();
        let env = env_with(1.0, ir, PiecewiseLinear::constant(0.1, 1.0));
        let report = env.validate();
        let v = report
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::IrAboveUpper)
            .expect("IR violation");
        assert_eq!(v.theta, Some(1.0));
        assert_eq!(v.t, Some(0.0));
    }

    #[test]
    fn domain_membership() {
        let env = env_with(1.0, doubled_upper(1.0), PiecewiseLinear::constant(0.1, 1.0));
        let up = env.upper_barrier(1.0, 0.0).unwrap();
        let lo = env.lower_barrier(1.0, 0.0).unwrap();
        assert!(env.domain_contains(1.0, 0.0, up).unwrap());
        assert!(!env.domain_contains(1.0, 0.0, lo).unwrap());
        assert!(!env.domain_contains(1.0, 1.0, -0.01).unwrap());
    }

    #[test]
    fn barrier_ordering_holds_on_valid_env() {
        let env = env_with(1.0, doubled_upper(1.0), PiecewiseLinear::constant(0.1, 1.0));
        for k in 0..100 {
            let t = k as f64 / 100.0;
            let lo = env.lower_at(0, t);
            let r = env.ir_at(0, t);
            assert!(lo <= r - env.c0_floor + 1e-15);
            assert!(r <= env.upper_at(0, t));
            assert!(env.contains_at(0, t, r));
        }
    }

    fn random_env() -> impl Strategy<Value = MarketEnvironment> {
        (0.3f64..3.0, 0.2f64..2.0, prop::collection::vec(1.05f64..3.0, 2..5), 0.01f64..0.5).prop_map(
            |(lambda, cap, factors, c)| {
                let slope = lambda * (-lambda * cap).exp();
                let n = factors.len();
                let mut pts: Vec<(f64, f64)> = factors
                    .iter()
                    .enumerate()
                    .map(|(k, f)| {
                        let t = k as f64 / n as f64;
                        (t, -f * slope * (1.0 - t))
                    })
                    .collect();
                pts.push((1.0, 0.0));
                let ty = AgentType {
                    theta: 1.0,
                    lambda,
                    ir: PiecewiseLinear::new(pts).unwrap(),
                    quit_cost: PiecewiseLinear::constant(c, 1.0),
                };
                MarketEnvironment::new(
                    AgentTypeSet::new(vec![ty]).unwrap(),
                    1.0,
                    cap,
                    PiecewiseLinear::constant(0.0, 1.0),
                    None,
                    None,
                    100,
                )
                .unwrap()
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn barriers_bracket_the_outside_option(env in random_env(), t in 0.0f64..0.999) {
            prop_assert!(env.validate().passed);
            let up = env.upper_barrier(1.0, t).unwrap();
            prop_assert!(env.upper_barrier(1.0, (t + 0.001).min(1.0)).unwrap() >= up);
            prop_assert_eq!(env.upper_barrier(1.0, 1.0).unwrap(), 0.0);
            let r = env.ir_at(0, t);
            prop_assert!(env.lower_barrier(1.0, t).unwrap() <= r - env.c0_floor + 1e-12);
            prop_assert!(r <= up + 1e-12);
            prop_assert!(env.domain_contains(1.0, t, r).unwrap());
        }
    }

    #[test]
    fn curve_interpolation() {
        let c = PiecewiseLinear::new(vec![(0.0, 1.0), (0.5, 2.0), (1.0, 0.0)]).unwrap();
        assert_eq!(c.eval(-1.0), 1.0);
        assert_eq!(c.eval(0.25), 1.5);
        assert_eq!(c.eval(0.5), 2.0);
        assert_eq!(c.eval(0.75), 1.0);
        assert_eq!(c.eval(2.0), 0.0);
        assert!(PiecewiseLinear::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
    }
}

//! Optimal-control problem ingredients and the benchmark systems.
//!
//! Every system is control-affine: `f`, `g` and `h` are affine in `u` for
//! fixed `(x, t)`. The Hamiltonian module relies on this to get an exact
//! control Hessian from first-order Jacobians.

mod cartpole;
mod hopper;
mod redundant_di;

use alloc::boxed::Box;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, RngCore};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Matrix, Vector};

pub use cartpole::{Cartpole, CartpoleParams};
pub use hopper::{Hopper, HopperParams, HOPPER_FLIGHT, HOPPER_STANCE};
pub use redundant_di::{RedundantDiParams, RedundantDoubleIntegrator};

/// Dynamics, constraints and bookkeeping for one benchmark system.
///
/// Implementations assume dimensions were checked by the caller; the free
/// functions in this module ([`dynamics_flow`], [`equality_constraint`], ...)
/// perform the checks.
pub trait SystemModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn eq_constraint_dim(&self, t: f64) -> usize;
    fn ineq_constraint_dim(&self, _t: f64) -> usize {
        0
    }

    fn flow(&self, x: &Vector, u: &Vector, t: f64) -> Vector;
    /// `(∂f/∂x, ∂f/∂u)`.
    fn flow_jacobians(&self, x: &Vector, u: &Vector, t: f64) -> (Matrix, Matrix);

    fn eq_constraint(&self, _x: &Vector, _u: &Vector, _t: f64) -> Vector {
        Vector::zeros(0)
    }
    /// `(∂g/∂x, ∂g/∂u)`.
    fn eq_constraint_jacobians(&self, _x: &Vector, _u: &Vector, _t: f64) -> (Matrix, Matrix) {
        (
            Matrix::zeros(0, self.state_dim()),
            Matrix::zeros(0, self.control_dim()),
        )
    }

    /// Inequality constraints in the form `h(x, u, t) ≥ 0`.
    fn ineq_constraint(&self, _x: &Vector, _u: &Vector, _t: f64) -> Vector {
        Vector::zeros(0)
    }
    fn ineq_constraint_jacobians(&self, _x: &Vector, _u: &Vector, _t: f64) -> (Matrix, Matrix) {
        (
            Matrix::zeros(0, self.state_dim()),
            Matrix::zeros(0, self.control_dim()),
        )
    }

    /// Empty for systems without switching.
    fn mode_schedule(&self) -> Option<&ModeSchedule> {
        None
    }

    /// Time input handed to the policy. Non-periodic systems are solved with a
    /// receding horizon of fixed length, so their normalized remaining horizon
    /// at the first knot is always one.
    fn phase_encode(&self, _t: f64) -> PhaseEncoding {
        PhaseEncoding::new(alloc::vec![1.0])
    }
    fn phase_dim(&self) -> usize {
        1
    }

    /// Box from which initial states are drawn uniformly.
    fn initial_state_bounds(&self) -> (Vector, Vector);
    fn sample_initial_state(&self, rng: &mut dyn RngCore) -> Vector {
        let (lo, hi) = self.initial_state_bounds();
        Vector::from_iterator(
            lo.len(),
            lo.iter().zip(hi.iter()).map(|(&l, &h)| rng.random_range(l..=h)),
        )
    }

    /// Typical disturbance magnitude of each state component.
    fn state_scale(&self) -> Vector;
    /// Early-termination predicate for closed-loop rollouts.
    fn diverged(&self, x: &Vector, t: f64) -> bool;

    fn default_cost(&self) -> QuadraticCost;
    /// MPC horizon length in seconds.
    fn default_horizon(&self) -> f64;
}

/// Identifier used in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SystemId {
    #[cfg_attr(feature = "serde", serde(rename = "redundant-di"))]
    RedundantDi,
    #[cfg_attr(feature = "serde", serde(rename = "cartpole"))]
    Cartpole,
    #[cfg_attr(feature = "serde", serde(rename = "hopper1d"))]
    Hopper1d,
}

impl SystemId {
    pub const ALL: [SystemId; 3] = [SystemId::RedundantDi, SystemId::Cartpole, SystemId::Hopper1d];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemId::RedundantDi => "redundant-di",
            SystemId::Cartpole => "cartpole",
            SystemId::Hopper1d => "hopper1d",
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "redundant-di" => Ok(SystemId::RedundantDi),
            "cartpole" => Ok(SystemId::Cartpole),
            "hopper1d" => Ok(SystemId::Hopper1d),
            other => Err(Error::InvalidConfig(alloc::format!("unknown system id `{other}`"))),
        }
    }
}

/// Physical parameter overrides. Unset fields keep the system defaults; fields
/// that do not belong to the selected system are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SystemParams {
    pub constraint_gain: Option<f64>,
    pub cart_mass: Option<f64>,
    pub pole_mass: Option<f64>,
    pub pole_length: Option<f64>,
    pub force_limit: Option<f64>,
    pub body_mass: Option<f64>,
    pub stance_duration: Option<f64>,
    pub flight_duration: Option<f64>,
    pub nominal_height: Option<f64>,
    pub gravity: Option<f64>,
}

pub fn build_system(id: SystemId, params: &SystemParams) -> Arc<dyn SystemModel> {
    match id {
        SystemId::RedundantDi => {
            let mut p = RedundantDiParams::default();
            if let Some(k) = params.constraint_gain {
                p.constraint_gain = k;
            }
            Arc::new(RedundantDoubleIntegrator::new(p))
        }
        SystemId::Cartpole => {
            let mut p = CartpoleParams::default();
            p.cart_mass = params.cart_mass.unwrap_or(p.cart_mass);
            p.pole_mass = params.pole_mass.unwrap_or(p.pole_mass);
            p.pole_length = params.pole_length.unwrap_or(p.pole_length);
            p.gravity = params.gravity.unwrap_or(p.gravity);
            p.force_limit = params.force_limit.unwrap_or(p.force_limit);
            Arc::new(Cartpole::new(p))
        }
        SystemId::Hopper1d => {
            let mut p = HopperParams::default();
            p.mass = params.body_mass.unwrap_or(p.mass);
            p.gravity = params.gravity.unwrap_or(p.gravity);
            p.stance_duration = params.stance_duration.unwrap_or(p.stance_duration);
            p.flight_duration = params.flight_duration.unwrap_or(p.flight_duration);
            p.nominal_height = params.nominal_height.unwrap_or(p.nominal_height);
            Arc::new(Hopper::new(p))
        }
    }
}

/// System, cost and barrier settings with default parameters.
pub fn build_problem(id: SystemId) -> Problem {
    Problem::new(build_system(id, &SystemParams::default()))
}

/// Contact/mode channel values handed to the policy in place of absolute time.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEncoding {
    pub phase: Vec<f64>,
}

impl PhaseEncoding {
    pub fn new(phase: Vec<f64>) -> Self {
        Self { phase }
    }
}

pub type ModeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSegment {
    pub start: f64,
    pub end: f64,
    pub mode: ModeId,
}

/// Periodic partition of `[0, period)` into mode intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSchedule {
    pub period: f64,
    pub segments: Vec<ModeSegment>,
}

/// Boundary slack absorbing the rounding of `i * dt` grids.
const MODE_TIME_EPS: f64 = 1e-9;

impl ModeSchedule {
    pub fn new(period: f64, segments: Vec<ModeSegment>) -> Self {
        Self { period, segments }
    }

    /// Time reduced into `[0, period)`.
    pub fn reduce(&self, t: f64) -> f64 {
        let mut r = t - self.period * libm::floor(t / self.period);
        if r >= self.period - MODE_TIME_EPS {
            r = 0.0;
        }
        r
    }

    /// Active segment and normalized progress `s ∈ [0, 1)` within it.
    pub fn locate(&self, t: f64) -> (&ModeSegment, f64) {
        let r = self.reduce(t);
        let seg = self
            .segments
            .iter()
            .find(|s| r < s.end - MODE_TIME_EPS)
            .unwrap_or_else(|| self.segments.last().expect("non-empty schedule"));
        let s = ((r - seg.start) / (seg.end - seg.start)).clamp(0.0, 1.0);
        (seg, s)
    }

    pub fn mode_at(&self, t: f64) -> ModeId {
        self.locate(t).0.mode
    }

    /// Mode switch times in `[t0, t1]`.
    pub fn switch_times(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut cycle = libm::floor(t0 / self.period) * self.period;
        while cycle <= t1 {
            for seg in &self.segments {
                let ts = cycle + seg.start;
                if ts >= t0 - MODE_TIME_EPS && ts <= t1 + MODE_TIME_EPS {
                    out.push(ts);
                }
            }
            cycle += self.period;
        }
        out
    }
}

pub type ReferenceFn = Arc<dyn Fn(f64) -> Vector + Send + Sync>;

/// `l = (x − x_ref(t))ᵀQ(x − x_ref(t)) + uᵀRu`, `Φ = (x − x_ref(t_f))ᵀQ_f(x − x_ref(t_f))`.
#[derive(Clone)]
pub struct QuadraticCost {
    pub q: Matrix,
    pub r: Matrix,
    pub q_final: Matrix,
    pub x_ref: ReferenceFn,
}

impl fmt::Debug for QuadraticCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticCost")
            .field("q", &self.q)
            .field("r", &self.r)
            .field("q_final", &self.q_final)
            .finish_non_exhaustive()
    }
}

impl QuadraticCost {
    pub fn new(q: Matrix, r: Matrix, q_final: Matrix, x_ref: ReferenceFn) -> Self {
        Self {
            q,
            r,
            q_final,
            x_ref,
        }
    }

    /// Regulation to a constant reference.
    pub fn regulator(q: Matrix, r: Matrix, q_final: Matrix, x_ref: Vector) -> Self {
        Self::new(q, r, q_final, Arc::new(move |_| x_ref.clone()))
    }

    pub fn reference(&self, t: f64) -> Vector {
        (self.x_ref)(t)
    }

    pub fn stage(&self, x: &Vector, u: &Vector, t: f64) -> f64 {
        let e = x - self.reference(t);
        e.dot(&(&self.q * &e)) + u.dot(&(&self.r * u))
    }

    pub fn terminal(&self, x: &Vector, t_final: f64) -> f64 {
        let e = x - self.reference(t_final);
        e.dot(&(&self.q_final * &e))
    }
}

/// Relaxed logarithmic barrier: `−μ ln y` for `y ≥ ε`, quadratic below.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct BarrierConfig {
    pub mu: f64,
    pub epsilon: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            mu: 0.1,
            epsilon: 0.01,
        }
    }
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu > 0.0 && self.epsilon > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig("barrier mu and epsilon must be positive".to_string()))
        }
    }

    /// The extension `μ(½((y − 2ε)/ε)² − ½ − ln ε)` matches value, slope and
    /// curvature of the log branch at `y = ε`.
    pub fn value(&self, y: f64) -> f64 {
        let (mu, eps) = (self.mu, self.epsilon);
        if y >= eps {
            -mu * libm::log(y)
        } else {
            let z = (y - 2.0 * eps) / eps;
            mu * (0.5 * z * z - 0.5 - libm::log(eps))
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        let (mu, eps) = (self.mu, self.epsilon);
        if y >= eps {
            -mu / y
        } else {
            mu * (y - 2.0 * eps) / (eps * eps)
        }
    }

    pub fn second_derivative(&self, y: f64) -> f64 {
        let (mu, eps) = (self.mu, self.epsilon);
        if y >= eps {
            mu / (y * y)
        } else {
            mu / (eps * eps)
        }
    }
}

/// Free function form of [`BarrierConfig::value`].
pub fn barrier(config: &BarrierConfig, y: f64) -> f64 {
    config.value(y)
}

/// A complete optimal-control problem: system, quadratic cost and barrier.
#[derive(Clone)]
pub struct Problem {
    pub system: Arc<dyn SystemModel>,
    pub cost: QuadraticCost,
    pub barrier: BarrierConfig,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("system", &self.system.name())
            .field("cost", &self.cost)
            .field("barrier", &self.barrier)
            .finish()
    }
}

impl Problem {
    pub fn new(system: Arc<dyn SystemModel>) -> Self {
        let cost = system.default_cost();
        Self {
            system,
            cost,
            barrier: BarrierConfig::default(),
        }
    }

    pub fn with_cost(mut self, cost: QuadraticCost) -> Self {
        self.cost = cost;
        self
    }

    pub fn with_barrier(mut self, barrier: BarrierConfig) -> Self {
        self.barrier = barrier;
        self
    }

    /// Sum of barrier penalties over the inequality constraints.
    pub fn barrier_cost(&self, x: &Vector, u: &Vector, t: f64) -> f64 {
        self.system
            .ineq_constraint(x, u, t)
            .iter()
            .map(|&h| self.barrier.value(h))
            .sum()
    }

    /// Stage cost plus barrier penalties; the quantity integrated by the solver.
    pub fn running_cost(&self, x: &Vector, u: &Vector, t: f64) -> f64 {
        self.cost.stage(x, u, t) + self.barrier_cost(x, u, t)
    }
}

pub fn dynamics_flow(model: &dyn SystemModel, x: &Vector, u: &Vector, t: f64) -> Result<Vector> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("control", model.control_dim(), u.len())?;
    Ok(model.flow(x, u, t))
}

/// `(A, B) = (∂f/∂x, ∂f/∂u)`.
pub fn linearize_dynamics(
    model: &dyn SystemModel,
    x: &Vector,
    u: &Vector,
    t: f64,
) -> Result<(Matrix, Matrix)> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("control", model.control_dim(), u.len())?;
    Ok(model.flow_jacobians(x, u, t))
}

pub fn equality_constraint(
    model: &dyn SystemModel,
    x: &Vector,
    u: &Vector,
    t: f64,
) -> Result<Vector> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("control", model.control_dim(), u.len())?;
    Ok(model.eq_constraint(x, u, t))
}

/// `(C, D) = (∂g/∂x, ∂g/∂u)`; fails with [`Error::DegenerateConstraint`] when
/// `D` does not have full row rank.
pub fn constraint_jacobians(
    model: &dyn SystemModel,
    x: &Vector,
    u: &Vector,
    t: f64,
) -> Result<(Matrix, Matrix)> {
    check_dim("state", model.state_dim(), x.len())?;
    check_dim("control", model.control_dim(), u.len())?;
    let (c, d) = model.eq_constraint_jacobians(x, u, t);
    if d.nrows() > 0 {
        let ddt = &d * d.transpose();
        let scale = ddt.diagonal().amax();
        if scale <= 0.0 || crate::linalg::min_eigenvalue(&ddt) <= 1e-12 * scale {
            return Err(Error::DegenerateConstraint);
        }
    }
    Ok((c, d))
}

pub fn stage_cost(cost: &QuadraticCost, x: &Vector, u: &Vector, t: f64) -> f64 {
    cost.stage(x, u, t)
}

pub fn terminal_cost(cost: &QuadraticCost, x: &Vector, t_final: f64) -> f64 {
    cost.terminal(x, t_final)
}

/// `l + Σ b(hᵢ) + νᵀg`.
pub fn lagrangian(
    problem: &Problem,
    x: &Vector,
    u: &Vector,
    t: f64,
    nu: &Vector,
) -> Result<f64> {
    let sys = problem.system.as_ref();
    check_dim("multiplier", sys.eq_constraint_dim(t), nu.len())?;
    let g = equality_constraint(sys, x, u, t)?;
    Ok(problem.running_cost(x, u, t) + nu.dot(&g))
}

pub fn phase_encode(model: &dyn SystemModel, t: f64) -> PhaseEncoding {
    model.phase_encode(t)
}

pub fn sample_feasible_initial_state(model: &dyn SystemModel, rng: &mut dyn RngCore) -> Vector {
    model.sample_initial_state(rng)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

/// One step of length `dt` holding `u` constant.
pub fn step_integrate(
    model: &dyn SystemModel,
    x: &Vector,
    u: &Vector,
    t: f64,
    dt: f64,
    integrator: Integrator,
) -> Result<Vector> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig("integration step must be positive".to_string()));
    }
    let k1 = dynamics_flow(model, x, u, t)?;
    let next = match integrator {
        Integrator::Euler => x + k1 * dt,
        Integrator::Rk4 => {
            let k2 = model.flow(&(x + &k1 * (0.5 * dt)), u, t + 0.5 * dt);
            let k3 = model.flow(&(x + &k2 * (0.5 * dt)), u, t + 0.5 * dt);
            let k4 = model.flow(&(x + &k3 * dt), u, t + dt);
            x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    };
    if crate::linalg::all_finite(next.as_slice()) {
        Ok(next)
    } else {
        Err(Error::NonFinite("integrated state"))
    }
}

/// Boxed helper for callers that need an owned system.
pub fn boxed(id: SystemId) -> Box<dyn SystemModel> {
    match id {
        SystemId::RedundantDi => Box::new(RedundantDoubleIntegrator::new(Default::default())),
        SystemId::Cartpole => Box::new(Cartpole::new(Default::default())),
        SystemId::Hopper1d => Box::new(Hopper::new(Default::default())),
    }
}

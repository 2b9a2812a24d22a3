//! Equality-constrained iLQR (the discrete-time counterpart of SLQ).
//!
//! Dynamics are discretized with explicit Euler at the solver step. The stage
//! constraint `g(x, u, t) = 0` is handled per knot: the affine control law is
//! projected onto the null space of `D = ∂g/∂u` plus a feasibility step, and
//! the multiplier is read off the KKT system of the stage subproblem.

use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::hamiltonian;
use crate::linalg::{all_finite, min_eigenvalue, symmetrize, KktFactor, Matrix, Vector};
use crate::systems::{Problem, SystemModel};

/// Smallest admissible eigenvalue of the stage control Hessian.
const MIN_CONTROL_CURVATURE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SolverConfig {
    /// Horizon length in seconds.
    pub horizon: f64,
    pub dt: f64,
    pub max_iterations: usize,
    /// Relative cost decrease below which the solver stops.
    pub cost_tolerance: f64,
    pub line_search_factor: f64,
    /// Smallest step length tried by the line search.
    pub line_search_floor: f64,
    pub constraint_tolerance: f64,
    /// Recompute ν at off-nominal states from the stage KKT system instead of
    /// extrapolating the nominal multiplier to first order.
    pub kkt_multipliers: bool,
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            dt: 0.01,
            max_iterations: 50,
            cost_tolerance: 1e-9,
            line_search_factor: 0.5,
            line_search_floor: 1e-4,
            constraint_tolerance: 1e-6,
            kkt_multipliers: true,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    /// Defaults with the system's preferred horizon.
    pub fn for_system(system: &dyn SystemModel) -> Self {
        Self {
            horizon: system.default_horizon(),
            ..Self::default()
        }
    }

    pub fn steps(&self) -> Result<usize> {
        self.validate()?;
        Ok(libm::round(self.horizon / self.dt) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.horizon > 0.0
            && self.dt > 0.0
            && self.max_iterations > 0
            && self.cost_tolerance > 0.0
            && self.line_search_factor > 0.0
            && self.line_search_factor < 1.0
            && self.line_search_floor > 0.0
            && self.constraint_tolerance > 0.0;
        if !positive {
            return Err(Error::InvalidConfig("solver settings must be positive".into()));
        }
        let n = libm::round(self.horizon / self.dt);
        if n < 1.0 || (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(Error::InvalidConfig("solver dt must divide the horizon".into()));
        }
        Ok(())
    }
}

/// Local quadratic model `V ≈ s0 + S_vᵀδx + ½ δxᵀS_mδx` about the nominal state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueApprox {
    pub s0: f64,
    pub s_v: Vector,
    pub s_m: Matrix,
}

#[derive(Debug, Clone)]
pub struct SolutionBundle {
    pub t0: f64,
    pub dt: f64,
    /// `N + 1` states.
    pub x_nom: Vec<Vector>,
    /// `N` controls.
    pub u_nom: Vec<Vector>,
    pub gains: Vec<Matrix>,
    /// `N + 1` entries, the last one is the terminal cost.
    pub value: Vec<ValueApprox>,
    /// Multipliers in continuous-time scaling, one per control knot.
    pub nu_nom: Vec<Vector>,
    /// `∂ν/∂x` along the nominal trajectory.
    pub nu_gain: Vec<Matrix>,
    pub converged: bool,
    pub total_cost: f64,
    pub iterations: usize,
    /// Cost after every accepted iterate, starting with the initial guess.
    pub cost_history: Vec<f64>,
}

/// Knot index and interpolation weight.
#[derive(Debug, Clone, Copy)]
struct Knot {
    k: usize,
    w: f64,
}

impl SolutionBundle {
    pub fn steps(&self) -> usize {
        self.u_nom.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.time(self.steps())
    }

    fn knot(&self, t: f64) -> Result<Knot> {
        let end = self.t_final();
        let slack = 1e-9 * self.dt;
        if !(t >= self.t0 - slack && t <= end + slack) {
            return Err(Error::OutsideHorizon {
                t,
                start: self.t0,
                end,
            });
        }
        let s = ((t - self.t0) / self.dt).clamp(0.0, self.steps() as f64);
        let k = (libm::floor(s) as usize).min(self.steps());
        Ok(Knot {
            k,
            w: (s - k as f64).clamp(0.0, 1.0),
        })
    }

    fn lerp_vec(items: &[Vector], kn: Knot) -> Vector {
        let k = kn.k.min(items.len() - 1);
        if kn.w == 0.0 || k + 1 >= items.len() {
            items[k].clone()
        } else {
            &items[k] * (1.0 - kn.w) + &items[k + 1] * kn.w
        }
    }

    fn lerp_mat(items: &[Matrix], kn: Knot) -> Matrix {
        let k = kn.k.min(items.len() - 1);
        if kn.w == 0.0 || k + 1 >= items.len() {
            items[k].clone()
        } else {
            &items[k] * (1.0 - kn.w) + &items[k + 1] * kn.w
        }
    }

    pub fn x_at(&self, t: f64) -> Result<Vector> {
        Ok(Self::lerp_vec(&self.x_nom, self.knot(t)?))
    }

    pub fn u_at(&self, t: f64) -> Result<Vector> {
        Ok(Self::lerp_vec(&self.u_nom, self.knot(t)?))
    }

    pub fn gain_at(&self, t: f64) -> Result<Matrix> {
        Ok(Self::lerp_mat(&self.gains, self.knot(t)?))
    }

    pub fn value_at(&self, t: f64) -> Result<ValueApprox> {
        let kn = self.knot(t)?;
        let k = kn.k.min(self.value.len() - 1);
        if kn.w == 0.0 || k + 1 >= self.value.len() {
            return Ok(self.value[k].clone());
        }
        let (a, b) = (&self.value[k], &self.value[k + 1]);
        Ok(ValueApprox {
            s0: a.s0 * (1.0 - kn.w) + b.s0 * kn.w,
            s_v: &a.s_v * (1.0 - kn.w) + &b.s_v * kn.w,
            s_m: &a.s_m * (1.0 - kn.w) + &b.s_m * kn.w,
        })
    }

    /// Largest constraint residual along the nominal trajectory.
    pub fn max_constraint_violation(&self, problem: &Problem) -> f64 {
        self.u_nom
            .iter()
            .enumerate()
            .map(|(k, u)| problem.system.eq_constraint(&self.x_nom[k], u, self.time(k)).norm())
            .fold(0.0, f64::max)
    }
}

/// `π_mpc(t, x) = u_nom(t) + K(t)(x − x_nom(t))`.
pub fn mpc_policy(bundle: &SolutionBundle, t: f64, x: &Vector) -> Result<Vector> {
    check_dim("state", bundle.x_nom[0].len(), x.len())?;
    let dx = x - bundle.x_at(t)?;
    Ok(bundle.u_at(t)? + bundle.gain_at(t)? * dx)
}

/// `∂ₓV(t, x) = S_v(t) + S_m(t)(x − x_nom(t))`.
pub fn value_derivative(bundle: &SolutionBundle, t: f64, x: &Vector) -> Result<Vector> {
    check_dim("state", bundle.x_nom[0].len(), x.len())?;
    let v = bundle.value_at(t)?;
    Ok(&v.s_v + &v.s_m * (x - bundle.x_at(t)?))
}

/// Value gradient that pairs with the stage at `t` in the Hamiltonian.
///
/// The discrete stage problem at `t` is stationary against the value gradient
/// of the *next* knot, evaluated at the successor state predicted with the MPC
/// law. Using it makes `argmin_u H` reproduce the solver's control exactly on
/// the nominal trajectory.
pub fn costate(bundle: &SolutionBundle, problem: &Problem, t: f64, x: &Vector) -> Result<Vector> {
    let u = mpc_policy(bundle, t, x)?;
    let t_next = (t + bundle.dt).min(bundle.t_final());
    let h = t_next - t;
    let x_next = x + problem.system.flow(x, &u, t) * h;
    value_derivative(bundle, t_next, &x_next)
}

/// Multiplier of the equality constraint at `(t, x)`.
///
/// With `kkt` set, ν solves the stage KKT system
/// `2Ru + Dᵀν + Bᵀλ + ∂ᵤb = 0, g = 0` with `λ` from [`costate`]. Otherwise
/// the nominal multiplier is extrapolated to first order.
pub fn lagrange_multiplier(
    bundle: &SolutionBundle,
    problem: &Problem,
    t: f64,
    x: &Vector,
    kkt: bool,
) -> Result<Vector> {
    if problem.system.eq_constraint_dim(t) == 0 {
        return Ok(Vector::zeros(0));
    }
    if kkt {
        let lambda = costate(bundle, problem, t, x)?;
        let (_, nu) = hamiltonian::constrained_argmin(problem, t, x, &lambda)?;
        Ok(nu)
    } else {
        let kn = bundle.knot(t)?;
        let nu = SolutionBundle::lerp_vec(&bundle.nu_nom, kn);
        let gain = SolutionBundle::lerp_mat(&bundle.nu_gain, kn);
        Ok(nu + gain * (x - bundle.x_at(t)?))
    }
}

struct Trajectory {
    x: Vec<Vector>,
    u: Vec<Vector>,
    cost: f64,
}

struct BackwardPass {
    k_feas: Vec<Vector>,
    k_descent: Vec<Vector>,
    gains: Vec<Matrix>,
    value_grad: Vec<Vector>,
    value_hess: Vec<Matrix>,
    nu: Vec<Vector>,
    nu_gain: Vec<Matrix>,
    /// First and second order coefficients of the predicted cost change.
    expected: (f64, f64),
}

/// Constrained iLQR solver for one problem.
#[derive(Debug, Clone)]
pub struct Solver {
    pub problem: Problem,
    pub config: SolverConfig,
}

impl Solver {
    pub fn new(problem: Problem, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        problem.barrier.validate()?;
        Ok(Self { problem, config })
    }

    /// Solve over the configured horizon starting at `(t0, x0)`.
    pub fn solve(
        &self,
        x0: &Vector,
        t0: f64,
        warm_start: Option<&SolutionBundle>,
    ) -> Result<SolutionBundle> {
        self.solve_steps(x0, t0, self.config.steps()?, warm_start)
    }

    /// Solve with an explicit number of knots, e.g. the remaining part of an
    /// earlier horizon.
    pub fn solve_steps(
        &self,
        x0: &Vector,
        t0: f64,
        steps: usize,
        warm_start: Option<&SolutionBundle>,
    ) -> Result<SolutionBundle> {
        let sys = self.problem.system.as_ref();
        check_dim("initial state", sys.state_dim(), x0.len())?;
        if !all_finite(x0.as_slice()) {
            return Err(Error::NonFinite("initial state"));
        }
        if steps == 0 {
            return Err(Error::InvalidConfig("horizon must contain at least one step".into()));
        }
        let dt = self.config.dt;
        let warm = warm_start.filter(|_| self.config.warm_start);
        let mut traj = match warm {
            Some(w) => {
                let guess: Vec<Vector> = (0..steps)
                    .map(|k| {
                        let t = (t0 + k as f64 * dt).min(w.t_final());
                        w.u_at(t).unwrap_or_else(|_| w.u_nom[w.steps() - 1].clone())
                    })
                    .collect();
                self.initial_rollout(x0, t0, steps, |k, _| guess[k].clone())?
            }
            None => {
                let zero = self.initial_rollout(x0, t0, steps, |_, _| Vector::zeros(sys.control_dim()))?;
                match self.reference_rollout(x0, t0, steps) {
                    Ok(seeded) if seeded.cost < zero.cost => seeded,
                    _ => zero,
                }
            }
        };
        let mut history = alloc::vec![traj.cost];
        let mut converged = false;
        let mut iterations = 0;

        let mut bp = self.backward_pass(&traj, t0)?;
        while iterations < self.config.max_iterations {
            let scale = 1.0 + traj.cost.abs();
            if -bp.expected.0 <= self.config.cost_tolerance * scale {
                converged = true;
                break;
            }
            iterations += 1;
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha >= self.config.line_search_floor {
                let cand = self.forward_pass(&traj, &bp, alpha, t0)?;
                if cand.cost.is_finite() && cand.cost < traj.cost {
                    accepted = Some(cand);
                    break;
                }
                alpha *= self.config.line_search_factor;
            }
            let Some(cand) = accepted else {
                log::debug!("line search failed at iteration {iterations}");
                break;
            };
            let decrease = traj.cost - cand.cost;
            traj = cand;
            history.push(traj.cost);
            bp = self.backward_pass(&traj, t0)?;
            if decrease <= self.config.cost_tolerance * scale {
                converged = true;
                break;
            }
        }

        let bundle = self.assemble(traj, bp, t0, converged, iterations, history);
        log::debug!(
            "solve t0={t0:.4} iterations={} cost={:.6e} max_g={:.3e} converged={}",
            bundle.iterations,
            bundle.total_cost,
            bundle.max_constraint_violation(&self.problem),
            bundle.converged
        );
        Ok(bundle)
    }

    fn trajectory_cost(&self, x: &[Vector], u: &[Vector], t0: f64) -> f64 {
        let dt = self.config.dt;
        let running: f64 = u
            .iter()
            .enumerate()
            .map(|(k, uk)| self.problem.running_cost(&x[k], uk, t0 + k as f64 * dt) * dt)
            .sum();
        let t_final = t0 + u.len() as f64 * dt;
        running + self.problem.cost.terminal(&x[u.len()], t_final)
    }

    /// Rolls out `control(k, x)`, projecting each control onto its
    /// constraint manifold with the minimum-norm correction.
    fn initial_rollout(
        &self,
        x0: &Vector,
        t0: f64,
        steps: usize,
        control: impl Fn(usize, &Vector) -> Vector,
    ) -> Result<Trajectory> {
        let sys = self.problem.system.as_ref();
        let dt = self.config.dt;
        let mut x = Vec::with_capacity(steps + 1);
        let mut u = Vec::with_capacity(steps);
        x.push(x0.clone());
        for k in 0..steps {
            let t = t0 + k as f64 * dt;
            let mut uk = control(k, &x[k]);
            if sys.eq_constraint_dim(t) > 0 {
                let g = sys.eq_constraint(&x[k], &uk, t);
                let (_, d) = sys.eq_constraint_jacobians(&x[k], &uk, t);
                let ddt = &d * d.transpose();
                let chol = ddt.cholesky().ok_or(Error::DegenerateConstraint)?;
                uk -= d.transpose() * chol.solve(&g);
            }
            let next = &x[k] + sys.flow(&x[k], &uk, t) * dt;
            x.push(next);
            u.push(uk);
        }
        let cost = self.trajectory_cost(&x, &u, t0);
        if !cost.is_finite() {
            return Err(Error::NonFinite("initial rollout cost"));
        }
        Ok(Trajectory { x, u, cost })
    }

    /// Closed-loop rollout under the control law of one backward pass taken
    /// about the reference trajectory with zero control. Used as a cold-start
    /// guess for unstable systems, where the zero-control rollout drifts far
    /// from the reference.
    fn reference_rollout(&self, x0: &Vector, t0: f64, steps: usize) -> Result<Trajectory> {
        let dt = self.config.dt;
        let nominal = Trajectory {
            x: (0..=steps).map(|k| self.problem.cost.reference(t0 + k as f64 * dt)).collect(),
            u: alloc::vec![Vector::zeros(self.problem.system.control_dim()); steps],
            cost: 0.0,
        };
        let bp = self.backward_pass(&nominal, t0)?;
        self.initial_rollout(x0, t0, steps, |k, x| {
            &nominal.u[k] + &bp.k_feas[k] + &bp.k_descent[k] + &bp.gains[k] * (x - &nominal.x[k])
        })
    }

    fn forward_pass(&self, nom: &Trajectory, bp: &BackwardPass, alpha: f64, t0: f64) -> Result<Trajectory> {
        let sys = self.problem.system.as_ref();
        let dt = self.config.dt;
        let n = nom.u.len();
        let mut x = Vec::with_capacity(n + 1);
        let mut u = Vec::with_capacity(n);
        x.push(nom.x[0].clone());
        for k in 0..n {
            let t = t0 + k as f64 * dt;
            let dx = &x[k] - &nom.x[k];
            let uk = &nom.u[k] + &bp.k_feas[k] + &bp.k_descent[k] * alpha + &bp.gains[k] * dx;
            let next = &x[k] + sys.flow(&x[k], &uk, t) * dt;
            u.push(uk);
            x.push(next);
        }
        let cost = self.trajectory_cost(&x, &u, t0);
        Ok(Trajectory { x, u, cost })
    }

    fn backward_pass(&self, traj: &Trajectory, t0: f64) -> Result<BackwardPass> {
        let problem = &self.problem;
        let sys = problem.system.as_ref();
        let cost = &problem.cost;
        let dt = self.config.dt;
        let n = traj.u.len();
        let nx = sys.state_dim();
        let nu_dim = sys.control_dim();

        let t_final = t0 + n as f64 * dt;
        let e_final = &traj.x[n] - cost.reference(t_final);
        let mut vx = (&cost.q_final * e_final) * 2.0;
        let mut vxx = &cost.q_final * 2.0;

        let mut out = BackwardPass {
            k_feas: alloc::vec![Vector::zeros(0); n],
            k_descent: alloc::vec![Vector::zeros(0); n],
            gains: alloc::vec![Matrix::zeros(0, 0); n],
            value_grad: alloc::vec![Vector::zeros(0); n + 1],
            value_hess: alloc::vec![Matrix::zeros(0, 0); n + 1],
            nu: alloc::vec![Vector::zeros(0); n],
            nu_gain: alloc::vec![Matrix::zeros(0, 0); n],
            expected: (0.0, 0.0),
        };
        out.value_grad[n] = vx.clone();
        out.value_hess[n] = vxx.clone();

        for k in (0..n).rev() {
            let t = t0 + k as f64 * dt;
            let (x, u) = (&traj.x[k], &traj.u[k]);
            let (a, b) = sys.flow_jacobians(x, u, t);
            let ad = Matrix::identity(nx, nx) + a * dt;
            let bd = b * dt;

            let e = x - cost.reference(t);
            let mut lx = (&cost.q * e) * (2.0 * dt);
            let mut lu = (&cost.r * u) * (2.0 * dt);
            let mut lxx = &cost.q * (2.0 * dt);
            let mut luu = &cost.r * (2.0 * dt);
            let mut lux = Matrix::zeros(nu_dim, nx);
            if sys.ineq_constraint_dim(t) > 0 {
                let h = sys.ineq_constraint(x, u, t);
                let (hx, hu) = sys.ineq_constraint_jacobians(x, u, t);
                for i in 0..h.len() {
                    let d1 = problem.barrier.derivative(h[i]) * dt;
                    let d2 = problem.barrier.second_derivative(h[i]) * dt;
                    let hxi = hx.row(i).transpose();
                    let hui = hu.row(i).transpose();
                    lx += &hxi * d1;
                    lu += &hui * d1;
                    lxx += &hxi * hxi.transpose() * d2;
                    luu += &hui * hui.transpose() * d2;
                    lux += &hui * hxi.transpose() * d2;
                }
            }

            let qx = lx + ad.transpose() * &vx;
            let qu = lu + bd.transpose() * &vx;
            let vxx_ad = &vxx * &ad;
            let qxx = lxx + ad.transpose() * &vxx_ad;
            let mut quu = luu + bd.transpose() * &vxx * &bd;
            symmetrize(&mut quu);
            let qux = lux + bd.transpose() * &vxx_ad;

            let mut quu_reg = quu.clone();
            let lam_min = min_eigenvalue(&quu);
            if lam_min < MIN_CONTROL_CURVATURE {
                for i in 0..nu_dim {
                    quu_reg[(i, i)] += MIN_CONTROL_CURVATURE - lam_min;
                }
            }

            let (g, c, d) = if sys.eq_constraint_dim(t) > 0 {
                let (c, d) = sys.eq_constraint_jacobians(x, u, t);
                (sys.eq_constraint(x, u, t), c, d)
            } else {
                (Vector::zeros(0), Matrix::zeros(0, nx), Matrix::zeros(0, nu_dim))
            };
            let kkt = KktFactor::new(&quu_reg, &d)?;

            let (k_descent, nu_descent) = kkt.solve(&(-&qu), &Vector::zeros(d.nrows()));
            let (k_feas, nu_feas) = kkt.solve(&Vector::zeros(nu_dim), &(-&g));
            let (gain, nu_gain) = kkt.solve_matrix(&(-&qux), &(-&c));
            let k_total = &k_descent + &k_feas;

            out.expected.0 += k_descent.dot(&qu);
            out.expected.1 += k_descent.dot(&(&quu * &k_descent));

            let quu_k = &quu * &k_total;
            vx = &qx + gain.transpose() * (&quu_k + &qu) + qux.transpose() * &k_total;
            vxx = &qxx
                + gain.transpose() * &quu * &gain
                + gain.transpose() * &qux
                + qux.transpose() * &gain;
            symmetrize(&mut vxx);

            if !all_finite(vx.as_slice()) || !all_finite(vxx.as_slice()) {
                return Err(Error::NonFinite("value function"));
            }

            out.k_feas[k] = k_feas;
            out.k_descent[k] = k_descent;
            out.gains[k] = gain;
            out.nu[k] = (nu_descent + nu_feas) / dt;
            out.nu_gain[k] = nu_gain / dt;
            out.value_grad[k] = vx.clone();
            out.value_hess[k] = vxx.clone();
        }
        Ok(out)
    }

    fn assemble(
        &self,
        traj: Trajectory,
        bp: BackwardPass,
        t0: f64,
        converged: bool,
        iterations: usize,
        cost_history: Vec<f64>,
    ) -> SolutionBundle {
        let dt = self.config.dt;
        let n = traj.u.len();
        // cost-to-go along the nominal trajectory
        let mut s0 = alloc::vec![0.0; n + 1];
        s0[n] = self.problem.cost.terminal(&traj.x[n], t0 + n as f64 * dt);
        for k in (0..n).rev() {
            s0[k] = s0[k + 1] + self.problem.running_cost(&traj.x[k], &traj.u[k], t0 + k as f64 * dt) * dt;
        }
        let value = bp
            .value_grad
            .into_iter()
            .zip(bp.value_hess)
            .zip(s0)
            .map(|((s_v, s_m), s0)| ValueApprox { s0, s_v, s_m })
            .collect();
        let total_cost = traj.cost;
        let converged = converged && total_cost.is_finite();
        SolutionBundle {
            t0,
            dt,
            x_nom: traj.x,
            u_nom: traj.u,
            gains: bp.gains,
            value,
            nu_nom: bp.nu,
            nu_gain: bp.nu_gain,
            converged,
            total_cost,
            iterations,
            cost_history,
        }
    }
}

/// Convenience wrapper around [`Solver::solve`].
pub fn solve(
    problem: &Problem,
    config: &SolverConfig,
    x0: &Vector,
    t0: f64,
    warm_start: Option<&SolutionBundle>,
) -> Result<SolutionBundle> {
    Solver::new(problem.clone(), config.clone())?.solve(x0, t0, warm_start)
}

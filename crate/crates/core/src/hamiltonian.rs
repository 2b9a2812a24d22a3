//! Pointwise control Hamiltonian `H = l + Σ b(hᵢ) + νᵀg + λᵀf`.
//!
//! All benchmark systems are control-affine with constraints affine in `u`,
//! so the derivatives in `u` are taken from an affine model built once per
//! context. [`evaluate`] always goes through the system functions.

use alloc::vec::Vec;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{median, min_eigenvalue, symmetrize, KktFactor, Matrix, Vector};
use crate::solver::{self, SolutionBundle, Solver};
use crate::systems::Problem;

const NEWTON_TOLERANCE: f64 = 1e-9;
const NEWTON_MAX_ITERATIONS: usize = 50;
/// Relative step size that ends the constrained Newton iteration.
const STEP_TOLERANCE: f64 = 1e-12;
/// Probes along the segment `u* → π` used to estimate δ.
pub const CERTIFICATE_PROBES: usize = 16;

/// `g` and `h` at `u = 0` plus the control Jacobians of `f`, `g`, `h` at a
/// fixed `(t, x)`.
#[derive(Debug, Clone)]
struct AffineModel {
    b: Matrix,
    g0: Vector,
    d: Matrix,
    h0: Vector,
    hu: Matrix,
}

impl AffineModel {
    fn new(problem: &Problem, t: f64, x: &Vector) -> Self {
        let sys = problem.system.as_ref();
        let zero = Vector::zeros(sys.control_dim());
        let (_, b) = sys.flow_jacobians(x, &zero, t);
        let (g0, d) = if sys.eq_constraint_dim(t) > 0 {
            (sys.eq_constraint(x, &zero, t), sys.eq_constraint_jacobians(x, &zero, t).1)
        } else {
            (Vector::zeros(0), Matrix::zeros(0, zero.len()))
        };
        let (h0, hu) = if sys.ineq_constraint_dim(t) > 0 {
            (sys.ineq_constraint(x, &zero, t), sys.ineq_constraint_jacobians(x, &zero, t).1)
        } else {
            (Vector::zeros(0), Matrix::zeros(0, zero.len()))
        };
        Self {
            b,
            g0,
            d,
            h0,
            hu,
        }
    }
}

/// Everything needed to evaluate `H` at one sample.
#[derive(Debug, Clone)]
pub struct HamiltonianContext<'a> {
    pub problem: &'a Problem,
    pub t: f64,
    pub x: Vector,
    pub dvdx: Vector,
    pub nu: Vector,
    model: AffineModel,
}

impl<'a> HamiltonianContext<'a> {
    pub fn new(problem: &'a Problem, t: f64, x: Vector, dvdx: Vector, nu: Vector) -> Result<Self> {
        let sys = problem.system.as_ref();
        check_dim("state", sys.state_dim(), x.len())?;
        check_dim("value gradient", sys.state_dim(), dvdx.len())?;
        check_dim("multiplier", sys.eq_constraint_dim(t), nu.len())?;
        let model = AffineModel::new(problem, t, &x);
        Ok(Self {
            problem,
            t,
            x,
            dvdx,
            nu,
            model,
        })
    }

    pub fn control_dim(&self) -> usize {
        self.problem.system.control_dim()
    }

    /// True when `H` is exactly quadratic in `u`.
    pub fn is_quadratic(&self) -> bool {
        self.model.h0.is_empty()
    }

    /// Gradient of `H` with the barrier terms left out, at `u = 0`.
    fn linear_term(&self) -> Vector {
        self.model.b.transpose() * &self.dvdx + self.model.d.transpose() * &self.nu
    }
}

/// `H(x, u, t) = l + Σ b(hᵢ) + νᵀg + ∂ₓVᵀf`.
pub fn evaluate(ctx: &HamiltonianContext<'_>, u: &Vector) -> f64 {
    let p = ctx.problem;
    let sys = p.system.as_ref();
    let mut h = p.running_cost(&ctx.x, u, ctx.t) + ctx.dvdx.dot(&sys.flow(&ctx.x, u, ctx.t));
    if !ctx.nu.is_empty() {
        h += ctx.nu.dot(&sys.eq_constraint(&ctx.x, u, ctx.t));
    }
    h
}

/// `∂ᵤH = 2Ru + Σ b'(hᵢ)∂ᵤhᵢ + Dᵀν + Bᵀ∂ₓV`.
pub fn u_gradient(ctx: &HamiltonianContext<'_>, u: &Vector) -> Vector {
    let mut grad = (&ctx.problem.cost.r * u) * 2.0 + ctx.linear_term();
    let m = &ctx.model;
    for i in 0..m.h0.len() {
        let row = m.hu.row(i);
        let hi = m.h0[i] + row.dot(&u.transpose());
        grad += row.transpose() * ctx.problem.barrier.derivative(hi);
    }
    grad
}

/// `∂²ᵤH = 2R + Σ b''(hᵢ)∂ᵤhᵢ∂ᵤhᵢᵀ`.
pub fn u_hessian(ctx: &HamiltonianContext<'_>, u: &Vector) -> Matrix {
    let mut hess = &ctx.problem.cost.r * 2.0;
    let m = &ctx.model;
    for i in 0..m.h0.len() {
        let row = m.hu.row(i);
        let hi = m.h0[i] + row.dot(&u.transpose());
        hess += row.transpose() * row * ctx.problem.barrier.second_derivative(hi);
    }
    symmetrize(&mut hess);
    hess
}

fn newton_step(ctx: &HamiltonianContext<'_>, u: &Vector) -> Result<(Vector, f64)> {
    let grad = u_gradient(ctx, u);
    let chol = u_hessian(ctx, u).cholesky().ok_or(Error::WeierstrassViolated)?;
    Ok((-chol.solve(&grad), grad.norm()))
}

/// `argmin_u H` with `ν` held fixed.
///
/// Closed form when `H` is quadratic, otherwise Newton iterations with
/// backtracking started from the barrier-free solution.
pub fn argmin(ctx: &HamiltonianContext<'_>) -> Result<Vector> {
    let r2 = &ctx.problem.cost.r * 2.0;
    let chol = r2.cholesky().ok_or(Error::WeierstrassViolated)?;
    let mut u = -chol.solve(&ctx.linear_term());
    if ctx.is_quadratic() {
        return Ok(u);
    }
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let (step, grad_norm) = newton_step(ctx, &u)?;
        if grad_norm <= NEWTON_TOLERANCE {
            break;
        }
        let h_now = evaluate(ctx, &u);
        let mut alpha = 1.0;
        let mut next = &u + &step;
        while evaluate(ctx, &next) > h_now && alpha > 1e-10 {
            alpha *= 0.5;
            next = &u + &step * alpha;
        }
        if next == u {
            break;
        }
        u = next;
    }
    if !crate::linalg::all_finite(u.as_slice()) {
        return Err(Error::NonFinite("Hamiltonian minimizer"));
    }
    Ok(u)
}

/// Minimizes `l + Σ b(hᵢ) + λᵀf` subject to `g = 0` at `(t, x)`.
///
/// Returns the control and the multiplier `ν` of the constraint, i.e. the
/// pair solving `∂ᵤH = 0, g = 0`.
pub fn constrained_argmin(problem: &Problem, t: f64, x: &Vector, lambda: &Vector) -> Result<(Vector, Vector)> {
    let sys = problem.system.as_ref();
    let nc = sys.eq_constraint_dim(t);
    let ctx = HamiltonianContext::new(problem, t, x.clone(), lambda.clone(), Vector::zeros(nc))?;
    let mut u = Vector::zeros(sys.control_dim());
    let mut nu = Vector::zeros(nc);
    for iter in 0..NEWTON_MAX_ITERATIONS {
        let grad = u_gradient(&ctx, &u);
        let hess = u_hessian(&ctx, &u);
        let g = &ctx.model.g0 + &ctx.model.d * &u;
        let kkt = KktFactor::new(&hess, &ctx.model.d).map_err(|e| match e {
            Error::IndefiniteHessian => Error::WeierstrassViolated,
            other => other,
        })?;
        let (step, nu_new) = kkt.solve(&(-&grad), &(-g));
        nu = nu_new;
        if ctx.is_quadratic() {
            u += step;
            break;
        }
        // After the first full step the iterate is feasible and every later
        // step lies in the null space of D, so backtracking keeps g = 0.
        let mut alpha = 1.0;
        if iter > 0 {
            let h_now = evaluate(&ctx, &u);
            while evaluate(&ctx, &(&u + &step * alpha)) > h_now && alpha > 1e-10 {
                alpha *= 0.5;
            }
        }
        u += &step * alpha;
        if step.norm() * alpha <= STEP_TOLERANCE * (1.0 + u.norm()) {
            break;
        }
    }
    Ok((u, nu))
}

/// Check of `‖π − u*‖² ≤ (2/δ)(H(π) − H(u*))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBoundCertificate {
    pub delta: f64,
    pub gap: f64,
    pub bound: f64,
    pub lhs: f64,
    pub holds: bool,
    pub reason: Option<&'static str>,
}

/// Certifies the control error bound for `pi_u` against `argmin H`.
///
/// δ is the smallest Hessian eigenvalue over [`CERTIFICATE_PROBES`] evenly
/// spaced points on the segment from `u*` to `pi_u`. The comparison allows a
/// slack of `1e-10` relative to the magnitude of the Hamiltonian values.
pub fn error_bound_certificate(ctx: &HamiltonianContext<'_>, pi_u: &Vector) -> Result<ErrorBoundCertificate> {
    check_dim("control", ctx.control_dim(), pi_u.len())?;
    let u_star = argmin(ctx)?;
    let p = pi_u - &u_star;
    let delta = (0..CERTIFICATE_PROBES)
        .map(|i| {
            let beta = i as f64 / (CERTIFICATE_PROBES - 1) as f64;
            min_eigenvalue(&u_hessian(ctx, &(&u_star + &p * beta)))
        })
        .fold(f64::INFINITY, f64::min);
    let (h_pi, h_star) = (evaluate(ctx, pi_u), evaluate(ctx, &u_star));
    let gap = h_pi - h_star;
    let lhs = p.norm_squared();
    if !(delta > 0.0) {
        return Ok(ErrorBoundCertificate {
            delta,
            gap,
            bound: f64::NAN,
            lhs,
            holds: false,
            reason: Some("non-positive curvature"),
        });
    }
    let bound = 2.0 * gap / delta;
    let slack = 1e-10 * (1.0 + h_pi.abs() + h_star.abs()) * 2.0 / delta;
    let holds = lhs <= bound + slack;
    Ok(ErrorBoundCertificate {
        delta,
        gap,
        bound,
        lhs,
        holds,
        reason: (!holds).then_some("bound violated"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    OnTrajectory,
    NearTrajectory,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::OnTrajectory => "on_trajectory",
            Self::NearTrajectory => "near_trajectory",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Mpc,
    ArgminH,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mpc => "mpc",
            Self::ArgminH => "argmin_h",
        }
    }
}

/// One probe: a state, its reference optimum and both candidate controls.
#[derive(Debug, Clone)]
pub struct ProbeRecord {
    pub kind: PointKind,
    pub t: f64,
    pub x: Vector,
    pub u_ref: Vector,
    pub u_mpc: Vector,
    pub u_argmin: Vector,
    pub g_mpc: f64,
    pub g_argmin: f64,
}

/// Median constraint violation and control error for one cell of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub point_kind: PointKind,
    pub policy_kind: PolicyKind,
    pub g_norm: f64,
    pub rel_u_err: f64,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub probes: Vec<ProbeRecord>,
    /// Near-trajectory probes dropped because the re-solve failed.
    pub skipped: usize,
}

impl BenchmarkReport {
    pub fn row(&self, point: PointKind, policy: PolicyKind) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.point_kind == point && r.policy_kind == policy)
    }
}

/// `‖u − u*‖/‖u*‖`, or the absolute error when the reference is zero.
pub fn relative_control_error(u: &Vector, u_ref: &Vector) -> f64 {
    let err = (u - u_ref).norm();
    let scale = u_ref.norm();
    if scale > 1e-9 {
        err / scale
    } else {
        err
    }
}

/// Compares `π_mpc` and `argmin H` on `n_points` knots of `bundle` and on as
/// many Gaussian perturbations of them.
///
/// The reference optimum at a perturbed state comes from re-solving the
/// remaining horizon of `bundle` from that state. `tube_sigma` holds standard
/// deviations per state entry.
pub fn benchmark_vs_mpc(
    solver: &Solver,
    bundle: &SolutionBundle,
    n_points: usize,
    tube_sigma: &Vector,
    rng: &mut dyn RngCore,
) -> Result<BenchmarkReport> {
    let problem = &solver.problem;
    let sys = problem.system.as_ref();
    check_dim("tube sigma", sys.state_dim(), tube_sigma.len())?;
    let steps = bundle.steps();
    let kkt = solver.config.kkt_multipliers;
    let mut probes = Vec::with_capacity(2 * n_points);
    let mut skipped = 0;

    let argmin_at = |t: f64, x: &Vector| -> Result<Vector> {
        let lambda = solver::costate(bundle, problem, t, x)?;
        let nu = solver::lagrange_multiplier(bundle, problem, t, x, kkt)?;
        argmin(&HamiltonianContext::new(problem, t, x.clone(), lambda, nu)?)
    };
    let g_norm = |t: f64, x: &Vector, u: &Vector| sys.eq_constraint(x, u, t).norm();

    for _ in 0..n_points {
        let k = (rng.next_u64() % steps as u64) as usize;
        let t = bundle.time(k);
        let x = bundle.x_nom[k].clone();
        let u_ref = bundle.u_nom[k].clone();
        let u_mpc = solver::mpc_policy(bundle, t, &x)?;
        let u_argmin = argmin_at(t, &x)?;
        probes.push(ProbeRecord {
            kind: PointKind::OnTrajectory,
            t,
            g_mpc: g_norm(t, &x, &u_mpc),
            g_argmin: g_norm(t, &x, &u_argmin),
            x,
            u_ref,
            u_mpc,
            u_argmin,
        });

        let noise = Vector::from_fn(sys.state_dim(), |i, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * tube_sigma[i]
        });
        let x_near = &bundle.x_nom[k] + noise;
        let resolved = solver.solve_steps(&x_near, t, steps - k, Some(bundle));
        let Ok(resolved) = resolved.map_err(|e| log::debug!("probe re-solve failed: {e}")) else {
            skipped += 1;
            continue;
        };
        if !resolved.converged {
            skipped += 1;
            continue;
        }
        let u_mpc = solver::mpc_policy(bundle, t, &x_near)?;
        let u_argmin = argmin_at(t, &x_near)?;
        probes.push(ProbeRecord {
            kind: PointKind::NearTrajectory,
            t,
            g_mpc: g_norm(t, &x_near, &u_mpc),
            g_argmin: g_norm(t, &x_near, &u_argmin),
            x: x_near,
            u_ref: resolved.u_nom[0].clone(),
            u_mpc,
            u_argmin,
        });
    }

    let mut rows = Vec::with_capacity(4);
    for point_kind in [PointKind::OnTrajectory, PointKind::NearTrajectory] {
        for policy_kind in [PolicyKind::Mpc, PolicyKind::ArgminH] {
            let (mut g, mut e) = (Vec::new(), Vec::new());
            for p in probes.iter().filter(|p| p.kind == point_kind) {
                let (u, gn) = match policy_kind {
                    PolicyKind::Mpc => (&p.u_mpc, p.g_mpc),
                    PolicyKind::ArgminH => (&p.u_argmin, p.g_argmin),
                };
                g.push(gn);
                e.push(relative_control_error(u, &p.u_ref));
            }
            rows.push(BenchmarkRow {
                point_kind,
                policy_kind,
                g_norm: median(&g),
                rel_u_err: median(&e),
            });
        }
    }
    Ok(BenchmarkReport {
        rows,
        probes,
        skipped,
    })
}

//! Experiment recipes shared by the commands and the acceptance suite.

use std::io::Write;

use anyhow::Context;
use mpcnet_core::hamiltonian::{self, BenchmarkReport, HamiltonianContext, PointKind, PolicyKind};
use mpcnet_core::policy::Policy;
use mpcnet_core::replay_buffer::ReplayBuffer;
use mpcnet_core::solver::{self, SolutionBundle, Solver};
use mpcnet_core::systems::{step_integrate, ModeSchedule, Problem};
use mpcnet_core::trainer::{self, MetricsRow, Stream, TrainerConfig, TrainingOutcome};
use mpcnet_core::Vector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::metrics::num;

/// Largest median relative control error of `argmin H` on the trajectory.
pub const ON_TRAJECTORY_MAX_ERR: f64 = 5e-3;
/// Largest median relative control error of `argmin H` inside the tube.
pub const NEAR_TRAJECTORY_MAX_ERR: f64 = 5e-2;
/// Largest median `‖g‖` of `argmin H` over all probes.
pub const ARGMIN_MAX_G: f64 = 1e-3;
/// Steps of slack allowed between a contact switch and a gating switch.
pub const GATING_SWITCH_TOLERANCE: usize = 2;

pub fn build_solver(config: &RunConfig) -> anyhow::Result<Solver> {
    Ok(Solver::new(config.problem(), config.solver.clone())?)
}

/// One training run with the sweep's settings and `seed`.
pub fn train_seed(
    solver: &Solver,
    trainer: &TrainerConfig,
    buffer: Option<ReplayBuffer>,
    on_metrics: &mut dyn FnMut(&MetricsRow),
) -> anyhow::Result<TrainingOutcome> {
    trainer::run_training(trainer, solver, buffer, on_metrics)
        .with_context(|| format!("training run with seed {}", trainer.seed))
}

/// First logged iteration at which every evaluation rollout ran the full
/// length.
pub fn first_full_survival(history: &[MetricsRow]) -> Option<usize> {
    history.iter().find(|r| r.full_survival >= 1.0).map(|r| r.iter)
}

#[derive(Debug, Clone)]
pub struct CertificateSweep {
    pub pairs: usize,
    pub holds: usize,
    pub min_delta: f64,
    /// Largest `‖π − u*‖² / bound` seen.
    pub max_ratio: f64,
}

impl CertificateSweep {
    pub fn all_hold(&self) -> bool {
        self.pairs > 0 && self.holds == self.pairs && self.min_delta > 0.0
    }
}

/// Certificates for `n_pairs` random (sample, control) pairs. Samples are
/// tube draws around random knots of `bundle`, with `∂ₓV` and `ν` taken from
/// the bundle; controls are Gaussian perturbations of `argmin H`.
pub fn certificate_sweep(
    solver: &Solver,
    bundle: &SolutionBundle,
    n_pairs: usize,
    tube_sigma: &Vector,
    rng: &mut dyn rand::RngCore,
) -> anyhow::Result<CertificateSweep> {
    let problem = &solver.problem;
    let n = problem.system.state_dim();
    let m = problem.system.control_dim();
    let mut sweep = CertificateSweep {
        pairs: 0,
        holds: 0,
        min_delta: f64::INFINITY,
        max_ratio: 0.0,
    };
    for _ in 0..n_pairs {
        let k = rng.random_range(0..bundle.steps());
        let t = bundle.time(k);
        let x = &bundle.x_nom[k] + Vector::from_fn(n, |i, _| tube_sigma[i] * gaussian(rng));
        let lambda = solver::costate(bundle, problem, t, &x)?;
        let nu = solver::lagrange_multiplier(bundle, problem, t, &x, solver.config.kkt_multipliers)?;
        let ctx = HamiltonianContext::new(problem, t, x, lambda, nu)?;
        let u_star = hamiltonian::argmin(&ctx)?;
        let pi = &u_star + Vector::from_fn(m, |_, _| gaussian(rng));
        let cert = hamiltonian::error_bound_certificate(&ctx, &pi)?;
        sweep.pairs += 1;
        sweep.holds += usize::from(cert.holds);
        sweep.min_delta = sweep.min_delta.min(cert.delta);
        if cert.bound > 0.0 {
            sweep.max_ratio = sweep.max_ratio.max(cert.lhs / cert.bound);
        }
    }
    Ok(sweep)
}

fn gaussian(rng: &mut dyn rand::RngCore) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub benchmark: BenchmarkReport,
    pub certificate: CertificateSweep,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Benchmark of `argmin H` against the re-solved optimum plus a certificate
/// sweep, judged against the fixed thresholds above.
///
/// `value_scale` multiplies the stored value model before anything reads it;
/// any value other than 1 corrupts `∂ₓV` on purpose.
pub fn verify(
    config: &RunConfig,
    points: usize,
    certificate_pairs: usize,
    seed: u64,
    value_scale: f64,
) -> anyhow::Result<VerifyReport> {
    let solver = build_solver(config)?;
    let sys = solver.problem.system.as_ref();
    let x0 = sys.sample_initial_state(&mut trainer::stream_rng(seed, Stream::InitialState));
    let mut bundle = solver.solve(&x0, 0.0, None).context("nominal solve")?;
    if value_scale != 1.0 {
        for v in &mut bundle.value {
            v.s_v *= value_scale;
            v.s_m *= value_scale;
        }
    }
    let sigma = sys.state_scale() * config.trainer.tube_scale;
    let mut rng = trainer::stream_rng(seed, Stream::Tube);
    let benchmark = hamiltonian::benchmark_vs_mpc(&solver, &bundle, points, &sigma, &mut rng)?;
    let certificate = certificate_sweep(&solver, &bundle, certificate_pairs, &sigma, &mut rng)?;

    let mut failures = Vec::new();
    let cell = |p, q| benchmark.row(p, q).expect("benchmark has every cell").clone();
    let on = cell(PointKind::OnTrajectory, PolicyKind::ArgminH);
    let near = cell(PointKind::NearTrajectory, PolicyKind::ArgminH);
    if !(on.rel_u_err <= ON_TRAJECTORY_MAX_ERR) {
        failures.push(format!("on-trajectory error {:.3e} > {ON_TRAJECTORY_MAX_ERR:e}", on.rel_u_err));
    }
    if !(near.rel_u_err <= NEAR_TRAJECTORY_MAX_ERR) {
        failures.push(format!("near-trajectory error {:.3e} > {NEAR_TRAJECTORY_MAX_ERR:e}", near.rel_u_err));
    }
    let g: Vec<f64> = benchmark.probes.iter().map(|p| p.g_argmin).collect();
    let g_median = mpcnet_core::linalg::median(&g);
    if !(g_median <= ARGMIN_MAX_G) {
        failures.push(format!("median ‖g‖ of argmin H {g_median:.3e} > {ARGMIN_MAX_G:e}"));
    }
    if !certificate.all_hold() {
        failures.push(format!("certificate holds on {}/{} pairs", certificate.holds, certificate.pairs));
    }
    Ok(VerifyReport {
        benchmark,
        certificate,
        failures,
    })
}

pub fn write_benchmark_csv<W: Write>(out: W, report: &BenchmarkReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["point_kind", "policy_kind", "g_norm", "rel_u_err"])?;
    for r in &report.rows {
        w.write_record([
            r.point_kind.as_str().to_string(),
            r.policy_kind.as_str().to_string(),
            num(r.g_norm),
            num(r.rel_u_err),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mixture weights along a closed-loop rollout of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingTrace {
    pub dt: f64,
    pub t: Vec<f64>,
    pub p: Vec<Vec<f64>>,
}

/// Rolls the policy out for `duration` seconds from a random start and
/// records the mixture weights at every step. Stops early on divergence.
pub fn gating_trace(
    policy: &Policy,
    problem: &Problem,
    trainer: &TrainerConfig,
    duration: f64,
    rng: &mut dyn rand::RngCore,
) -> anyhow::Result<GatingTrace> {
    let sys = problem.system.as_ref();
    let dt = trainer.dt;
    let steps = (duration / dt).round() as usize;
    let mut x = sys.sample_initial_state(rng);
    let mut trace = GatingTrace {
        dt,
        t: Vec::with_capacity(steps),
        p: Vec::with_capacity(steps),
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        let cache = policy.forward(&sys.phase_encode(t).phase, x.as_slice())?;
        trace.t.push(t);
        trace.p.push(cache.p);
        match step_integrate(sys, &x, &cache.u, t, dt, trainer.integrator) {
            Ok(next) if !sys.diverged(&next, t + dt) => x = next,
            _ => break,
        }
    }
    Ok(trace)
}

pub fn write_gating_csv<W: Write>(out: W, trace: &GatingTrace) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = trace.p.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("p_{i}")));
    w.write_record(&header)?;
    for (t, p) in trace.t.iter().zip(&trace.p) {
        let mut row = vec![num(*t)];
        row.extend(p.iter().copied().map(num));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingAnalysis {
    /// Dominant expert per mode, when it is unique away from switches.
    pub mode_experts: Vec<Option<usize>>,
    pub constant_within_modes: bool,
    pub distinct_across_modes: bool,
    /// Largest distance in steps between a dominant-expert change and the
    /// nearest contact switch, over every change and every switch.
    pub max_switch_offset: usize,
    pub periodic: bool,
    pub steps: usize,
}

impl GatingAnalysis {
    pub fn passed(&self) -> bool {
        self.constant_within_modes
            && self.distinct_across_modes
            && self.max_switch_offset <= GATING_SWITCH_TOLERANCE
            && self.periodic
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

/// Relates the dominant expert of `trace` to the contact schedule.
/// Steps within [`GATING_SWITCH_TOLERANCE`] of a switch are excluded from
/// the per-mode and periodicity checks.
pub fn analyze_gating(trace: &GatingTrace, schedule: &ModeSchedule) -> GatingAnalysis {
    let n = trace.t.len();
    let dt = trace.dt;
    let dominant: Vec<usize> = trace.p.iter().map(|p| argmax(p)).collect();
    let t_end = trace.t.last().copied().unwrap_or(0.0);
    let switches: Vec<usize> = schedule
        .switch_times(0.0, t_end)
        .into_iter()
        .map(|ts| (ts / dt).round() as usize)
        .filter(|&k| k > 0 && k < n)
        .collect();
    let dist = |k: usize| switches.iter().map(|&s| k.abs_diff(s)).min().unwrap_or(usize::MAX);
    let tol = GATING_SWITCH_TOLERANCE;

    let n_modes = schedule.segments.iter().map(|s| s.mode + 1).max().unwrap_or(1);
    let mut seen: Vec<Vec<usize>> = vec![Vec::new(); n_modes];
    for k in (0..n).filter(|&k| dist(k) > tol) {
        let m = schedule.mode_at(trace.t[k]);
        if !seen[m].contains(&dominant[k]) {
            seen[m].push(dominant[k]);
        }
    }
    let mode_experts: Vec<Option<usize>> = seen.iter().map(|s| (s.len() == 1).then(|| s[0])).collect();
    let constant_within_modes = n > 0 && mode_experts.iter().all(Option::is_some);
    let mut distinct: Vec<usize> = mode_experts.iter().flatten().copied().collect();
    distinct.sort_unstable();
    distinct.dedup();
    let distinct_across_modes = constant_within_modes && distinct.len() == n_modes;

    let changes: Vec<usize> = (1..n).filter(|&k| dominant[k] != dominant[k - 1]).collect();
    let change_offset = changes.iter().map(|&k| dist(k)).max().unwrap_or(0);
    let switch_offset = switches
        .iter()
        .map(|&s| changes.iter().map(|&c| c.abs_diff(s)).min().unwrap_or(usize::MAX))
        .max()
        .unwrap_or(0);
    let max_switch_offset = change_offset.max(switch_offset);

    let period_steps = (schedule.period / dt).round() as usize;
    let pairs: Vec<usize> = (0..n.saturating_sub(period_steps))
        .filter(|&k| dist(k) > tol && dist(k + period_steps) > tol)
        .collect();
    let periodic = !pairs.is_empty() && pairs.iter().all(|&k| dominant[k] == dominant[k + period_steps]);

    GatingAnalysis {
        mode_experts,
        constant_within_modes,
        distinct_across_modes,
        max_switch_offset,
        periodic,
        steps: n,
    }
}

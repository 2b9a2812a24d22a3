//! Guided policy training: solver rollouts with mixed control fill a replay
//! buffer, and the policy is fitted to the buffer by minimizing either the
//! Hamiltonian or a behavioral-cloning loss.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::hamiltonian::{self, HamiltonianContext};
use crate::linalg::{median, Vector};
use crate::policy::{self, AmsGrad, Architecture, Gating, Policy, PolicyDims};
use crate::replay_buffer::{ReplayBuffer, Sample};
use crate::solver::{self, Solver};
use crate::systems::{step_integrate, Integrator, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LossKind {
    #[default]
    Hamiltonian,
    Bc,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hamiltonian => "hamiltonian",
            Self::Bc => "bc",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hamiltonian" => Ok(Self::Hamiltonian),
            "bc" => Ok(Self::Bc),
            other => Err(Error::InvalidConfig(alloc::format!("unknown loss '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainerConfig {
    pub max_iter: usize,
    pub mpc_decimation: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seconds.
    pub rollout_length: f64,
    pub dt: f64,
    pub n_experts: usize,
    pub buffer_capacity: usize,
    pub latent_dim: usize,
    pub loss: LossKind,
    pub arch: Architecture,
    pub gating: Gating,
    pub tube_sampling: bool,
    /// Tube standard deviation per state as a multiple of the system's state scale.
    pub tube_scale: f64,
    pub eval_every: usize,
    pub eval_rollouts: usize,
    /// Standard deviation of additive noise on the state seen by the policy
    /// during evaluation, relative to the state scale.
    pub eval_observation_noise: f64,
    pub integrator: Integrator,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            max_iter: 100_000,
            mpc_decimation: 500,
            batch_size: 32,
            learning_rate: 1e-3,
            rollout_length: 3.0,
            dt: 0.0025,
            n_experts: 8,
            buffer_capacity: 100_000,
            latent_dim: 32,
            loss: LossKind::Hamiltonian,
            arch: Architecture::Moe,
            gating: Gating::Sigmoid,
            tube_sampling: true,
            tube_scale: 0.05,
            eval_every: 1000,
            eval_rollouts: 5,
            eval_observation_noise: 0.0,
            integrator: Integrator::Euler,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mpc_decimation > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.rollout_length > 0.0
            && self.dt > 0.0
            && self.n_experts > 0
            && self.buffer_capacity > 0
            && self.latent_dim > 0
            && self.tube_scale >= 0.0
            && self.eval_every > 0
            && self.eval_observation_noise >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("trainer settings out of range".to_string()))
        }
    }

    pub fn rollout_steps(&self) -> usize {
        libm::round(self.rollout_length / self.dt) as usize
    }
}

/// Independent random streams, so changing one consumer leaves the others
/// untouched.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Weights = 1,
    InitialState = 2,
    Tube = 3,
    Batch = 4,
    Eval = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Weight of the learned policy in the rollout control.
pub fn alpha_schedule(iter: usize, max_iter: usize) -> f64 {
    if max_iter == 0 {
        0.0
    } else {
        (iter as f64 / max_iter as f64).clamp(0.0, 1.0)
    }
}

/// `(1 − α) u_mpc + α u_learned`.
pub fn mixing_policy(alpha: f64, u_mpc: &Vector, u_learned: &Vector) -> Vector {
    u_mpc * (1.0 - alpha) + u_learned * alpha
}

/// Draw from `N(x_nom, diag(covariance))`.
pub fn tube_sample(x_nom: &Vector, covariance: &Vector, rng: &mut dyn RngCore) -> Vector {
    Vector::from_fn(x_nom.len(), |i, _| {
        if covariance[i] == 0.0 {
            return x_nom[i];
        }
        let z: f64 = StandardNormal.sample(rng);
        x_nom[i] + libm::sqrt(covariance[i]) * z
    })
}

/// Diagonal tube covariance `(scale · state_scale)²`.
pub fn tube_covariance(problem: &Problem, scale: f64) -> Vector {
    problem.system.state_scale().map(|s| (scale * s) * (scale * s))
}

/// Policy dimensions and input normalization for a system.
pub fn policy_for(problem: &Problem, config: &TrainerConfig, rng: &mut dyn RngCore) -> Result<Policy> {
    let sys = problem.system.as_ref();
    let dims = PolicyDims {
        phase_dim: sys.phase_dim(),
        state_dim: sys.state_dim(),
        latent_dim: config.latent_dim,
        control_dim: sys.control_dim(),
        n_experts: config.n_experts,
    };
    let mut policy = Policy::init(config.arch, config.gating, dims, rng)?;
    let (lo, hi) = sys.initial_state_bounds();
    let scale = sys.state_scale();
    let mut offset = vec![0.0; dims.phase_dim];
    let mut spread = vec![1.0; dims.phase_dim];
    offset.extend((0..dims.state_dim).map(|i| 0.5 * (lo[i] + hi[i])));
    spread.extend(scale.iter().copied());
    policy.set_normalization(offset, spread)?;
    Ok(policy)
}

/// Per-expert Hamiltonian values and control gradients for one sample.
pub struct ExpertTerms {
    pub cache: policy::ForwardCache,
    pub values: Vec<f64>,
    pub gradients: Vec<Vector>,
}

pub fn hamiltonian_terms(policy: &Policy, sample: &Sample, problem: &Problem) -> Result<ExpertTerms> {
    let cache = policy.forward(sample.phase.as_slice(), sample.x.as_slice())?;
    let ctx = HamiltonianContext::new(
        problem,
        sample.t,
        sample.x.clone(),
        sample.dvdx.clone(),
        sample.nu.clone(),
    )?;
    let values = cache
        .expert_outputs
        .iter()
        .map(|u| hamiltonian::evaluate(&ctx, u))
        .collect();
    let gradients = cache
        .expert_outputs
        .iter()
        .map(|u| hamiltonian::u_gradient(&ctx, u))
        .collect();
    Ok(ExpertTerms {
        cache,
        values,
        gradients,
    })
}

/// `Σⱼ Σᵢ pᵢ H(xⱼ, πᵢ, tⱼ)` and its gradient in θ.
pub fn hamiltonian_batch_loss(policy: &Policy, batch: &[Sample], problem: &Problem) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut grad = vec![0.0; policy.num_parameters()];
    let mut loss = 0.0;
    for sample in batch {
        let terms = hamiltonian_terms(policy, sample, problem)?;
        loss += terms.cache.p.iter().zip(&terms.values).map(|(p, h)| p * h).sum::<f64>();
        policy.backward(&terms.cache, &terms.gradients, &terms.values, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Batch mean of `(u_mpc − π)ᵀR(u_mpc − π)` and its gradient in θ.
pub fn bc_batch_loss(policy: &Policy, batch: &[Sample], problem: &Problem) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let r = &problem.cost.r;
    let n = batch.len() as f64;
    let mut grad = vec![0.0; policy.num_parameters()];
    let mut loss = 0.0;
    for sample in batch {
        let cache = policy.forward(sample.phase.as_slice(), sample.x.as_slice())?;
        check_dim("stored control", cache.u.len(), sample.u_mpc.len())?;
        let e = &sample.u_mpc - &cache.u;
        let re = r * &e;
        loss += e.dot(&re) / n;
        let du = re * (-2.0 / n);
        let values: Vec<f64> = cache.expert_outputs.iter().map(|u| du.dot(u)).collect();
        let dus = vec![du; values.len()];
        policy.backward(&cache, &dus, &values, &mut grad)?;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutStats {
    pub samples: usize,
    /// Simulated seconds.
    pub duration: f64,
    pub diverged: bool,
    pub solver_failed: bool,
    pub nonconverged_solves: usize,
}

/// One solver-guided rollout from a random start, appending a sample at
/// every step. The system is driven by `(1 − α) π_mpc + α π_θ`.
#[allow(clippy::too_many_arguments)]
pub fn mpc_rollout_and_record(
    config: &TrainerConfig,
    solver: &Solver,
    policy: &Policy,
    alpha: f64,
    buffer: &mut ReplayBuffer,
    init_rng: &mut dyn RngCore,
    tube_rng: &mut dyn RngCore,
) -> Result<RolloutStats> {
    let problem = &solver.problem;
    let sys = problem.system.as_ref();
    let covariance = if config.tube_sampling {
        tube_covariance(problem, config.tube_scale)
    } else {
        Vector::zeros(sys.state_dim())
    };
    let kkt = solver.config.kkt_multipliers;
    let mut stats = RolloutStats::default();
    let mut x = sys.sample_initial_state(init_rng);
    let mut bundle: Option<solver::SolutionBundle> = None;

    for step in 0..config.rollout_steps() {
        let t = step as f64 * config.dt;
        let solved = match solver.solve(&x, t, bundle.as_ref()) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("solver failed during rollout at t={t:.4}: {e}");
                stats.solver_failed = true;
                break;
            }
        };
        if !solved.converged {
            stats.nonconverged_solves += 1;
        }
        let phase = sys.phase_encode(t).phase;
        let x_s = tube_sample(&x, &covariance, tube_rng);
        let recorded = (|| -> Result<Sample> {
            Ok(Sample {
                t,
                phase: Vector::from_vec(phase.clone()),
                dvdx: solver::costate(&solved, problem, t, &x_s)?,
                nu: solver::lagrange_multiplier(&solved, problem, t, &x_s, kkt)?,
                u_mpc: solver::mpc_policy(&solved, t, &x_s)?,
                x: x_s,
            })
        })();
        match recorded {
            Ok(sample) => {
                if buffer.append(sample) {
                    stats.samples += 1;
                }
            }
            Err(e) => log::warn!("could not record sample at t={t:.4}: {e}"),
        }

        let u_mpc = solved.u_nom[0].clone();
        let u = if alpha > 0.0 {
            mixing_policy(alpha, &u_mpc, &policy.act(&phase, x.as_slice())?)
        } else {
            u_mpc
        };
        bundle = Some(solved);
        x = match step_integrate(sys, &x, &u, t, config.dt, config.integrator) {
            Ok(next) => next,
            Err(_) => {
                stats.diverged = true;
                stats.duration = t + config.dt;
                break;
            }
        };
        stats.duration = t + config.dt;
        if sys.diverged(&x, stats.duration) {
            stats.diverged = true;
            break;
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean accumulated running cost per rollout.
    pub avg_cost: f64,
    /// Mean survival time in seconds.
    pub survival_s: f64,
    /// Survival time of each rollout.
    pub survival_each: Vec<f64>,
    /// Median of `‖g‖` over all steps of all rollouts.
    pub g_median: f64,
    /// Steps at which each expert had the largest mixture weight.
    pub expert_usage: Vec<usize>,
    /// Mean entropy of the mixture weights.
    pub expert_entropy: f64,
}

impl EvalReport {
    /// Fraction of rollouts that ran the full length.
    pub fn full_survival_fraction(&self, rollout_length: f64, dt: f64) -> f64 {
        if self.survival_each.is_empty() {
            return 0.0;
        }
        let full = self
            .survival_each
            .iter()
            .filter(|&&s| s >= rollout_length - 0.5 * dt)
            .count();
        full as f64 / self.survival_each.len() as f64
    }
}

/// Closed-loop rollouts driven by `controller(t, x) → (u, mixture weights)`.
pub fn evaluate_controller(
    problem: &Problem,
    config: &TrainerConfig,
    n_rollouts: usize,
    rng: &mut dyn RngCore,
    controller: &mut dyn FnMut(f64, &Vector) -> Result<(Vector, Option<Vec<f64>>)>,
) -> Result<EvalReport> {
    let sys = problem.system.as_ref();
    let noise_std = sys.state_scale() * config.eval_observation_noise;
    let mut costs = Vec::with_capacity(n_rollouts);
    let mut survival_each = Vec::with_capacity(n_rollouts);
    let mut g_all = Vec::new();
    let mut usage = Vec::new();
    let mut entropy_sum = 0.0;
    let mut entropy_count = 0usize;

    for _ in 0..n_rollouts {
        let mut x = sys.sample_initial_state(rng);
        let mut cost = 0.0;
        let mut survived = 0.0;
        for step in 0..config.rollout_steps() {
            let t = step as f64 * config.dt;
            let observed = if config.eval_observation_noise > 0.0 {
                tube_sample(&x, &noise_std.map(|s| s * s), rng)
            } else {
                x.clone()
            };
            let (u, p) = controller(t, &observed)?;
            if let Some(p) = p {
                if usage.len() < p.len() {
                    usage.resize(p.len(), 0);
                }
                let best = p
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(i, _)| i);
                usage[best] += 1;
                entropy_sum += policy::entropy(&p);
                entropy_count += 1;
            }
            cost += problem.running_cost(&x, &u, t) * config.dt;
            g_all.push(sys.eq_constraint(&x, &u, t).norm());
            let next = step_integrate(sys, &x, &u, t, config.dt, config.integrator);
            survived = t + config.dt;
            match next {
                Ok(next) if !sys.diverged(&next, survived) => x = next,
                _ => break,
            }
        }
        costs.push(cost);
        survival_each.push(survived);
    }
    let n = n_rollouts.max(1) as f64;
    Ok(EvalReport {
        avg_cost: costs.iter().sum::<f64>() / n,
        survival_s: survival_each.iter().sum::<f64>() / n,
        survival_each,
        g_median: median(&g_all),
        expert_usage: usage,
        expert_entropy: if entropy_count > 0 {
            entropy_sum / entropy_count as f64
        } else {
            0.0
        },
    })
}

/// Closed-loop evaluation of the learned policy alone.
pub fn evaluate_policy(
    policy: &Policy,
    problem: &Problem,
    config: &TrainerConfig,
    n_rollouts: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalReport> {
    let sys = problem.system.as_ref();
    evaluate_controller(problem, config, n_rollouts, rng, &mut |t, x| {
        let cache = policy.forward(&sys.phase_encode(t).phase, x.as_slice())?;
        let p = (policy.arch == Architecture::Moe).then(|| cache.p.clone());
        Ok((cache.u, p))
    })
}

/// Closed-loop evaluation with the solver in the loop, re-solving every step.
pub fn evaluate_mpc(
    solver: &Solver,
    config: &TrainerConfig,
    n_rollouts: usize,
    rng: &mut dyn RngCore,
) -> Result<EvalReport> {
    let mut warm: Option<solver::SolutionBundle> = None;
    evaluate_controller(&solver.problem, config, n_rollouts, rng, &mut |t, x| {
        let warm_ref = warm.as_ref().filter(|w| w.t0 < t);
        let bundle = solver.solve(x, t, warm_ref)?;
        let u = bundle.u_nom[0].clone();
        warm = Some(bundle);
        Ok((u, None))
    })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub demo_seconds: f64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub avg_cost: f64,
    pub survival_s: f64,
    pub g_median: f64,
    pub alpha: f64,
    pub expert_entropy: f64,
    /// Fraction of evaluation rollouts that ran the full length.
    pub full_survival: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub policy: Policy,
    pub history: Vec<MetricsRow>,
    pub buffer: ReplayBuffer,
    pub rollouts: usize,
    pub demo_seconds: f64,
    pub final_eval: Option<EvalReport>,
}

/// Runs the guided training loop.
///
/// Iterations are numbered from 1. A rollout happens at every iteration with
/// `(iter − 1) % mpc_decimation == 0`, so the first optimizer step already
/// has data. `buffer` seeds the replay buffer, e.g. from a snapshot.
pub fn run_training(
    config: &TrainerConfig,
    solver: &Solver,
    buffer: Option<ReplayBuffer>,
    on_metrics: &mut dyn FnMut(&MetricsRow),
) -> Result<TrainingOutcome> {
    config.validate()?;
    let problem = &solver.problem;
    let mut policy = policy_for(problem, config, &mut stream_rng(config.seed, Stream::Weights))?;
    let mut buffer = match buffer {
        Some(b) => b,
        None => ReplayBuffer::new(config.buffer_capacity)?,
    };
    let mut init_rng = stream_rng(config.seed, Stream::InitialState);
    let mut tube_rng = stream_rng(config.seed, Stream::Tube);
    let mut batch_rng = stream_rng(config.seed, Stream::Batch);
    let mut optimizer = AmsGrad::new(policy.num_parameters(), config.learning_rate);

    let mut history = Vec::new();
    let mut rollouts = 0;
    let mut demo_seconds = 0.0;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut final_eval = None;

    for iter in 1..=config.max_iter {
        let alpha = alpha_schedule(iter, config.max_iter);
        if (iter - 1) % config.mpc_decimation == 0 {
            let stats = mpc_rollout_and_record(
                config,
                solver,
                &policy,
                alpha,
                &mut buffer,
                &mut init_rng,
                &mut tube_rng,
            )?;
            rollouts += 1;
            demo_seconds += stats.duration;
            log::debug!(
                "rollout {rollouts} at iter {iter}: {:.3} s, {} samples, diverged={}",
                stats.duration,
                stats.samples,
                stats.diverged
            );
        }
        if !buffer.is_empty() {
            let batch = buffer.draw_batch(config.batch_size, &mut batch_rng)?;
            let (loss, grad) = match config.loss {
                LossKind::Hamiltonian => hamiltonian_batch_loss(&policy, &batch, problem)?,
                LossKind::Bc => bc_batch_loss(&policy, &batch, problem)?,
            };
            optimizer.update(policy.theta_mut(), &grad)?;
            loss_sum += loss;
            loss_count += 1;
        }
        if iter % config.eval_every == 0 || iter == config.max_iter {
            let mut eval_rng = stream_rng(config.seed, Stream::Eval);
            let report = evaluate_policy(&policy, problem, config, config.eval_rollouts, &mut eval_rng)?;
            let row = MetricsRow {
                iter,
                demo_seconds,
                loss: if loss_count > 0 {
                    loss_sum / loss_count as f64
                } else {
                    f64::NAN
                },
                avg_cost: report.avg_cost,
                survival_s: report.survival_s,
                g_median: report.g_median,
                alpha,
                expert_entropy: report.expert_entropy,
                full_survival: report.full_survival_fraction(config.rollout_length, config.dt),
            };
            on_metrics(&row);
            history.push(row);
            loss_sum = 0.0;
            loss_count = 0;
            final_eval = Some(report);
        }
    }
    Ok(TrainingOutcome {
        policy,
        history,
        buffer,
        rollouts,
        demo_seconds,
        final_eval,
    })
}

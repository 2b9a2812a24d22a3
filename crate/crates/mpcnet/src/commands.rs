//! The four subcommands as library functions.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use mpcnet_core::trainer::{self, EvalReport, Stream, TrainerConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::experiments;
use crate::metrics::write_metrics_file;
use crate::{buffer_file, policy_file};

pub const METRICS_FILE: &str = "metrics.csv";
pub const POLICY_FILE: &str = "policy.bin";
pub const BUFFER_FILE: &str = "buffer.bin";
pub const SUMMARY_FILE: &str = "summary.json";
pub const VERIFY_FILE: &str = "verify.csv";
pub const GATING_FILE: &str = "gating_trace.csv";

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed-{seed}"))
}

/// Serializable view of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub avg_cost: f64,
    pub survival_s: f64,
    pub survival_each: Vec<f64>,
    pub full_survival: f64,
    pub g_median: f64,
    pub expert_usage: Vec<usize>,
    pub expert_entropy: f64,
}

impl EvalSummary {
    pub fn new(report: &EvalReport, trainer: &TrainerConfig) -> Self {
        Self {
            episodes: report.survival_each.len(),
            avg_cost: report.avg_cost,
            survival_s: report.survival_s,
            survival_each: report.survival_each.clone(),
            full_survival: report.full_survival_fraction(trainer.rollout_length, trainer.dt),
            g_median: report.g_median,
            expert_usage: report.expert_usage.clone(),
            expert_entropy: report.expert_entropy,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub rollouts: usize,
    pub demo_seconds: f64,
    pub buffer_len: usize,
    pub final_eval: Option<EvalSummary>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub buffer_in: Option<PathBuf>,
    pub buffer_out: Option<PathBuf>,
}

/// Trains one policy per configured seed under `out_dir/seed-<s>/`.
pub fn train(config: &RunConfig, options: &TrainOptions) -> Result<Vec<TrainSummary>, CliError> {
    if options.buffer_out.is_some() && config.seeds.len() > 1 {
        return Err(CliError::usage("--buffer-out needs a single seed"));
    }
    let initial = match &options.buffer_in {
        Some(p) => Some(buffer_file::load(p, Some(config.trainer.buffer_capacity))?),
        None => None,
    };
    config.echo_to(&config.out_dir)?;
    let solver = experiments::build_solver(config)?;
    let mut summaries = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let trainer = config.trainer_for_seed(seed);
        let dir = seed_dir(&config.out_dir, seed);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let outcome = experiments::train_seed(&solver, &trainer, initial.clone(), &mut |row| {
            log::info!(
                "seed {seed} iter {} loss {:.4e} survival {:.3} s g {:.3e}",
                row.iter,
                row.loss,
                row.survival_s,
                row.g_median
            )
        })?;
        write_metrics_file(&dir.join(METRICS_FILE), &outcome.history)?;
        policy_file::save(&dir.join(POLICY_FILE), &outcome.policy).map_err(anyhow::Error::from)?;
        let buffer_path = options.buffer_out.clone().unwrap_or_else(|| dir.join(BUFFER_FILE));
        buffer_file::save(&buffer_path, &outcome.buffer).map_err(anyhow::Error::from)?;
        let summary = TrainSummary {
            seed,
            rollouts: outcome.rollouts,
            demo_seconds: outcome.demo_seconds,
            buffer_len: outcome.buffer.len(),
            final_eval: outcome.final_eval.as_ref().map(|r| EvalSummary::new(r, &trainer)),
        };
        fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary).expect("summary") + "\n")
            .context("writing summary")?;
        summaries.push(summary);
    }
    Ok(summaries)
}

/// Closed-loop evaluation of a stored policy on the configured system.
pub fn eval(config: &RunConfig, policy_path: &Path, episodes: usize) -> Result<EvalSummary, CliError> {
    let policy = policy_file::load(policy_path)?;
    let problem = config.problem();
    policy_file::check_against(&policy, problem.system.as_ref(), policy_path)?;
    let mut rng = trainer::stream_rng(config.seeds[0], Stream::Eval);
    let report = trainer::evaluate_policy(&policy, &problem, &config.trainer, episodes, &mut rng)
        .context("evaluation rollout")?;
    Ok(EvalSummary::new(&report, &config.trainer))
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub points: usize,
    pub certificate_pairs: usize,
    pub value_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            points: 40,
            certificate_pairs: 1000,
            value_scale: 1.0,
        }
    }
}

/// Writes `out_dir/verify.csv` and returns the report; the caller decides
/// the exit code from [`experiments::VerifyReport::passed`].
pub fn verify(config: &RunConfig, options: &VerifyOptions) -> Result<experiments::VerifyReport, CliError> {
    if options.points == 0 {
        return Err(CliError::usage("--points must be positive"));
    }
    let report = experiments::verify(
        config,
        options.points,
        options.certificate_pairs,
        config.seeds[0],
        options.value_scale,
    )?;
    fs::create_dir_all(&config.out_dir).context("creating output directory")?;
    let path = config.out_dir.join(VERIFY_FILE);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    experiments::write_benchmark_csv(file, &report.benchmark).context("writing verify CSV")?;
    Ok(report)
}

/// Writes `out_dir/gating_trace.csv` for `periods` gait periods (or one
/// solver horizon for systems without a contact schedule).
pub fn gating_trace(config: &RunConfig, policy_path: &Path, periods: usize) -> Result<experiments::GatingTrace, CliError> {
    let policy = policy_file::load(policy_path)?;
    let problem = config.problem();
    policy_file::check_against(&policy, problem.system.as_ref(), policy_path)?;
    let period = problem
        .system
        .mode_schedule()
        .map_or(config.solver.horizon, |s| s.period);
    let mut rng = trainer::stream_rng(config.seeds[0], Stream::Eval);
    let trace = experiments::gating_trace(&policy, &problem, &config.trainer, period * periods as f64, &mut rng)?;
    fs::create_dir_all(&config.out_dir).context("creating output directory")?;
    let path = config.out_dir.join(GATING_FILE);
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    experiments::write_gating_csv(file, &trace).context("writing gating CSV")?;
    Ok(trace)
}

pub fn print_json<T: Serialize>(mut out: impl Write, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mpcnet::commands::{self, TrainOptions, VerifyOptions};
use mpcnet::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "mpcnet", version, about = "Train and check policies guided by a constrained trajectory optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy per seed and write metrics, policy and buffer files.
    Train {
        #[command(flatten)]
        common: Common,
        /// Start from a saved replay buffer.
        #[arg(long)]
        buffer_in: Option<PathBuf>,
        /// Where to write the final replay buffer (single seed only).
        #[arg(long)]
        buffer_out: Option<PathBuf>,
    },
    /// Evaluate a stored policy and print the report as JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
    },
    /// Compare the Hamiltonian minimizer with the solver and check the error bound.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 40)]
        points: usize,
        #[arg(long, default_value_t = 1000)]
        certificate_pairs: usize,
        /// Multiplies the value model; anything but 1 corrupts the check.
        #[arg(long, default_value_t = 1.0, hide = true)]
        value_scale: f64,
    },
    /// Record the mixture weights along a rollout of a stored policy.
    GatingTrace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 1)]
        periods: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// redundant-di, cartpole or hopper1d.
    #[arg(long)]
    system: Option<String>,
    /// hamiltonian or bc.
    #[arg(long)]
    loss: Option<String>,
    /// moe or mlp.
    #[arg(long)]
    arch: Option<String>,
    /// Sample training states around the nominal trajectory.
    #[arg(long, value_enum)]
    tube: Option<Toggle>,
    /// Number of optimizer steps.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Dotted-key override, e.g. `trainer.batch_size=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut overrides = Vec::new();
        let quoted = |s: &str| serde_json::Value::String(s.to_string()).to_string();
        if let Some(s) = &self.system {
            overrides.push(format!("system={}", quoted(s)));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("seeds=[{s}]"));
        }
        if let Some(p) = &self.out {
            overrides.push(format!("out_dir={}", quoted(&p.to_string_lossy())));
        }
        if let Some(l) = &self.loss {
            overrides.push(format!("trainer.loss={}", quoted(l)));
        }
        if let Some(a) = &self.arch {
            overrides.push(format!("trainer.arch={}", quoted(a)));
        }
        if let Some(t) = self.tube {
            overrides.push(format!("trainer.tube_sampling={}", matches!(t, Toggle::On)));
        }
        if let Some(n) = self.max_iter {
            overrides.push(format!("trainer.max_iter={n}"));
        }
        overrides.extend(self.overrides.iter().cloned());
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let stdout = std::io::stdout().lock();
    match cli.command {
        Command::Train {
            common,
            buffer_in,
            buffer_out,
        } => {
            let config = common.load()?;
            let summaries = commands::train(&config, &TrainOptions { buffer_in, buffer_out })?;
            commands::print_json(stdout, &summaries)?;
            Ok(true)
        }
        Command::Eval {
            common,
            policy,
            episodes,
        } => {
            let config = common.load()?;
            let summary = commands::eval(&config, &policy, episodes)?;
            commands::print_json(stdout, &summary)?;
            Ok(true)
        }
        Command::Verify {
            common,
            points,
            certificate_pairs,
            value_scale,
        } => {
            let config = common.load()?;
            let report = commands::verify(
                &config,
                &VerifyOptions {
                    points,
                    certificate_pairs,
                    value_scale,
                },
            )?;
            let mut out = stdout;
            mpcnet::experiments::write_benchmark_csv(&mut out, &report.benchmark)
                .map_err(anyhow::Error::from)?;
            eprintln!(
                "certificate holds on {}/{} pairs (min curvature {:.3e}); {} probes skipped",
                report.certificate.holds, report.certificate.pairs, report.certificate.min_delta, report.benchmark.skipped
            );
            for f in &report.failures {
                eprintln!("FAIL: {f}");
            }
            Ok(report.passed())
        }
        Command::GatingTrace {
            common,
            policy,
            periods,
        } => {
            let config = common.load()?;
            let trace = commands::gating_trace(&config, &policy, periods)?;
            eprintln!("{} steps written to {}", trace.t.len(), config.out_dir.join(commands::GATING_FILE).display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}

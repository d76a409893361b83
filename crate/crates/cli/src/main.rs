//! `glauber`: runs Glauber dynamics experiments from a TOML config.
//!
//! Exit codes: 0 success, 1 internal or I/O failure, 2 usage or input
//! error, 3 capacity exceeded, 4 remote transport failure.

mod commands;
mod config;
mod output;
mod scorer_spec;
mod states;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, Overrides};

/// Invalid invocation or configuration; the message names the field.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "glauber",
    version,
    about = "Glauber dynamics experiments with local conditional scorers"
)]
struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scorer kind, e.g. potts, perturbed, independent, tabular, remote.
    #[arg(long, global = true)]
    scorer: Option<String>,
    /// Remote scorer endpoint (`host:port`, `tcp://host:port` or `stdio:cmd args`).
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Temperatures, comma separated.
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    tau: Option<Vec<f64>>,
    /// Sequence lengths, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Chain steps, or the step budget of `couple` and `hit`.
    #[arg(long, global = true)]
    steps: Option<u64>,
    #[arg(long, global = true)]
    record_every: Option<u64>,
    /// NDJSON file of initial states, one `{"ids":[...],"frozen":[...]}` per line.
    #[arg(long, global = true)]
    states: Option<PathBuf>,
    /// Any config field as `path.to.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run chains and record trajectories.
    Run,
    /// Meeting times of maximally coupled chains.
    Couple,
    /// Hitting times of a Hamming radius around the start.
    Hit,
    /// Path-dependence campaign over random rectangles.
    Rect,
    /// Influence and oscillation matrices.
    Influence,
    /// Exact stationary law, mixing times and reversibility defect.
    Exact,
    /// Drift on the boundary of a token-count basin.
    Drift,
    /// Margin of a basin and the escape bounds it implies.
    Margin,
    /// Trap detection in a trajectory or in fresh runs.
    Traps,
    /// Print the resolved config as TOML.
    ShowConfig,
    /// Serve the configured synthetic scorer over the wire protocol.
    ServeSynthetic {
        /// Listen on this TCP address instead of stdin/stdout.
        #[arg(long)]
        listen: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Couple => "couple",
            Command::Hit => "hit",
            Command::Rect => "rect",
            Command::Influence => "influence",
            Command::Exact => "exact",
            Command::Drift => "drift",
            Command::Margin => "margin",
            Command::Traps => "traps",
            Command::ShowConfig => "show-config",
            Command::ServeSynthetic { .. } => "serve-synthetic",
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out.clone(),
        scorer: cli.scorer.clone(),
        endpoint: cli.endpoint.clone(),
        tau: cli.tau.clone(),
        n: cli.n.clone(),
        steps: cli.steps,
        record_every: cli.record_every,
        states: cli.states.clone(),
        sets: cli.sets.clone(),
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let config = ExperimentConfig::load(cli.config.as_deref(), &overrides(cli))?;
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global()?;
    }
    match &cli.command {
        Command::ShowConfig => {
            print!("{}", config.to_toml());
            Ok(())
        }
        Command::ServeSynthetic { listen } => {
            commands::serve::serve_synthetic(&config, listen.as_deref())
        }
        cmd => commands::execute(cmd.name(), &config),
    }
}

fn exit_code(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<glauber::Error>() {
            return match e {
                glauber::Error::Capacity { .. } => 3,
                e if e.is_transport() => 4,
                glauber::Error::Domain(_) | glauber::Error::Input(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

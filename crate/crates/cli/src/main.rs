#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod commands;
mod config;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// A configuration or usage problem; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "lungssl", version, about = "Self-supervised pretraining and tree inference for lung ultrasound frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a config value, e.g. `--set ssl.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Write into this directory instead of a new timestamped one under
    /// `output_dir`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate a synthetic dataset (manifest + PNG frames).
    Synth,
    /// Self-supervised pretraining of extractor and projector.
    Pretrain,
    /// Train one task head under the LC, FT or NC protocol.
    Train,
    /// Build the AUC report from checkpoints or a per-cell CSV.
    Eval,
    /// Label-efficiency sweep over fractions, tasks, protocols and seeds.
    Sweep,
    /// Latency benchmark of serial vs shared-backbone inference.
    Bench,
    /// Run the decision tree over the test split.
    Infer,
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || matches!(c.downcast_ref::<lungssl::Error>(), Some(lungssl::Error::InvalidConfig { .. }))
    })
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    commands::run(cli.command, &config, cli.run_dir.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}

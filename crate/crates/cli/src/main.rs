use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stl_funnel_cli::{cmd_eval, cmd_funnel, cmd_monitor, cmd_train, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "stlfunnel", version, about = "Funnel-shaped STL rewards and time-aware deep Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides one config key, e.g. `--set train.optimizer.lr=0.0005`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the funnel schedule and write it with plot data.
    Funnel {
        #[command(flatten)]
        common: Common,
    },
    /// Train a Q-network on the configured task.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run greedy episodes and check them against the formula.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to eval.episodes from the config.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Check a trajectory CSV against the formula.
    Monitor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectory: PathBuf,
    },
}

fn load(c: &Common) -> Result<RunConfig, CliError> {
    RunConfig::load(&c.config, c.seed, c.out.as_deref(), &c.sets)
}

fn print<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Funnel { common } => print(&cmd_funnel(&load(&common)?)?),
        Command::Train { common, resume } => print(&cmd_train(&load(&common)?, resume.as_deref())?),
        Command::Eval {
            common,
            checkpoint,
            episodes,
        } => {
            let cfg = load(&common)?;
            let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join("checkpoint.json"));
            let n = episodes.unwrap_or(cfg.eval.episodes);
            print(&cmd_eval(&cfg, &ckpt, n)?)
        }
        Command::Monitor { common, trajectory } => print(&cmd_monitor(&load(&common)?, &trajectory)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STLFUNNEL_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

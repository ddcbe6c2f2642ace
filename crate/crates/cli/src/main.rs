use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use eccl_core::ScheduleKind;

mod commands;
mod config;
mod export;

/// Evolved-curriculum training for the Attackers and Defenders map game.
#[derive(Parser, Debug)]
#[command(name = "eccl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one schedule and write metrics, checkpoints and a summary.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        schedule: Option<ScheduleKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `output_dir` from the config, then `runs/<schedule>_seed<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print constructive maps in board text format.
    Gen {
        #[arg(short = 'n', default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the boards here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evolve maps against a loss-predictor checkpoint.
    Evolve {
        #[arg(short = 'n', default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Loss-predictor checkpoint; without one every feasible map scores 0.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory for boards.txt and generations.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Greedy score of an agent checkpoint on a seeded evaluation set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluation seed; the master seed of a run reproduces its evaluation set.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of evaluation maps; defaults to the config's eval_set_size.
        #[arg(short = 'n')]
        n: Option<usize>,
    },
    /// Split metrics CSVs into per-schedule score and loss series.
    Export {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, default_value = "series")]
        out: PathBuf,
        /// Also draw one SVG line chart per metric.
        #[arg(long)]
        svg: bool,
    },
    /// Print the effective configuration as TOML.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Bad flags or an unusable config file; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { config, schedule, seed, out } => commands::run(config.as_deref(), schedule, seed, out),
        Command::Gen { n, seed, config, out } => commands::gen(n, seed, config.as_deref(), out.as_deref()),
        Command::Evolve { n, seed, config, checkpoint, out } => {
            commands::evolve(n, seed, config.as_deref(), checkpoint.as_deref(), &out)
        }
        Command::Eval { checkpoint, config, seed, n } => commands::eval(&checkpoint, config.as_deref(), seed, n),
        Command::Export { metrics, out, svg } => export::export(&metrics, &out, svg),
        Command::Config { config } => {
            let cfg = config::load(config.as_deref())?;
            print!("{}", config::to_toml(&cfg)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use minlearn_cli::{
    cmd_analyze, cmd_check, cmd_simulate, cmd_source_sets, InclusiveRange, SimulateOverrides,
};
use minlearn_core::TraceFormat;

#[derive(Parser)]
#[command(
    name = "minlearn",
    version,
    about = "Distributed hypothesis testing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the learning preconditions of an experiment.
    Check { config: PathBuf },
    /// Print the source set of every hypothesis pair.
    SourceSets { config: PathBuf },
    /// Run an experiment and write its trace(s).
    Simulate {
        config: PathBuf,
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Inclusive seed range `a..b`; one trace per seed.
        #[arg(long)]
        seeds: Option<InclusiveRange>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// `csv` or `jsonl`; inferred from the output extension otherwise.
        #[arg(long)]
        format: Option<TraceFormat>,
        /// Record every k-th step.
        #[arg(long)]
        thin: Option<usize>,
        /// Assert invariants live.
        #[arg(long)]
        checked: bool,
    },
    /// Summarize convergence and decay rates of a JSONL trace.
    Analyze {
        trace: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Inclusive step window `t0..t1` for decay estimates.
        #[arg(long)]
        window: Option<InclusiveRange>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Command::Check { config } => cmd_check(&config, &mut out),
        Command::SourceSets { config } => cmd_source_sets(&config, &mut out),
        Command::Simulate {
            config,
            seed,
            seeds,
            horizon,
            output,
            format,
            thin,
            checked,
        } => {
            let overrides = SimulateOverrides {
                seed,
                seeds,
                horizon,
                output,
                format,
                thin,
                checked,
            };
            cmd_simulate(&config, &overrides, &mut out)
        }
        Command::Analyze {
            trace,
            epsilon,
            window,
        } => cmd_analyze(&trace, epsilon, window, &mut out),
    };
    let _ = out.flush();
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

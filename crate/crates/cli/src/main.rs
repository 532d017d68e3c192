//! `qratchet`: run experiments described by JSON configs.

mod config;
mod fail;
mod model;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::run::{Mode, Overrides};

#[derive(Parser)]
#[command(name = "qratchet", version, about = "Engineered-dissipation simulations from JSON configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task declared in the config.
    Run(Common),
    /// Run a parameter sweep; one CSV row per point.
    Sweep(Common),
    /// Closed-form rates only.
    Rates(Common),
}

#[derive(Args)]
struct Common {
    config: PathBuf,
    /// Worker threads for ensembles (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, c) = match cli.command {
        Command::Run(c) => (Mode::Run, c),
        Command::Sweep(c) => (Mode::Sweep, c),
        Command::Rates(c) => (Mode::Rates, c),
    };
    if let Some(n) = c.threads {
        if n == 0 {
            eprintln!("config error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ov = Overrides { seed: c.seed, out: c.out };
    match run::execute(&c.config, mode, &ov) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

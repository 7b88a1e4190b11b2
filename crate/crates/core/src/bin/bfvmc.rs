use std::path::PathBuf;
use std::process::ExitCode;

use bfvmc::driver::{run_check_gradients, run_jfit, run_measure, run_oracle, run_train, CliOverrides, RunConfig};
use bfvmc::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bfvmc", version, about = "Neural-network VMC for molecular Hamiltonians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Workers in the partitioned MARCH step.
    #[arg(long)]
    partition: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the network.
    Train(Common),
    /// Measure energy and spin observables.
    Measure(Common),
    /// Write the exact ground-state fixture for the configured system.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Fixture path (default: <output>/oracle.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic log-derivatives.
    CheckGradients(Common),
    /// Fit the exchange coupling to (energy, S^2) points.
    JFit(Common),
}

fn load(c: &Common) -> bfvmc::Result<RunConfig> {
    let cli = CliOverrides {
        seed: c.seed,
        threads: c.threads,
        partition: c.partition,
        output: c.output.clone(),
    };
    let cfg = RunConfig::load(c.config.as_deref(), std::env::vars(), &cli)?;
    if let Some(n) = cfg.run.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(cfg)
}

fn print<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> bfvmc::Result<bool> {
    match cli.command {
        Command::Train(c) => print(&run_train(&load(&c)?)?),
        Command::Measure(c) => print(&run_measure(&load(&c)?)?),
        Command::Oracle { common, out } => print(&run_oracle(&load(&common)?, out)?),
        Command::CheckGradients(c) => {
            let s = run_check_gradients(&load(&c)?)?;
            print(&s);
            return Ok(s.passed);
        }
        Command::JFit(c) => print(&run_jfit(&load(&c)?)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kfl_cli::{cmd_check_theory, cmd_partition_stats, cmd_run, cmd_sweep, with_threads, CommonArgs};

/// Federated-learning simulations with FedAvg, Kuramoto phase-synchronized
/// aggregation, SCAFFOLD and FedProx.
#[derive(Parser)]
#[command(name = "kfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and manifest.json.
    Run(Common),
    /// Run the Cartesian product of the [sweep] axes and write summary.csv.
    Sweep(Common),
    /// Run the descent-bound and variance checks from the [theory] section.
    CheckTheory(Common),
    /// Print per-client label histograms of the configured partition.
    PartitionStats(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    threads: Option<usize>,
    /// Record per-round wall time in the metrics CSV.
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (f, c): (fn(&CommonArgs, &mut dyn io::Write) -> anyhow::Result<kfl_cli::Status>, Common) = match cli.command {
        Command::Run(c) => (cmd_run, c),
        Command::Sweep(c) => (cmd_sweep, c),
        Command::CheckTheory(c) => (cmd_check_theory, c),
        Command::PartitionStats(c) => (cmd_partition_stats, c),
    };
    let args = CommonArgs {
        config: c.config,
        out: c.out,
        seed: c.seed,
        timing: c.timing,
    };
    let result = with_threads(c.threads, || f(&args, &mut io::stdout())).and_then(|r| r);
    match result {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

//! Library side of the `kfl` command-line tool: experiment-file parsing,
//! metrics output and the subcommands, exposed for integration tests.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{
    cmd_check_theory, cmd_partition_stats, cmd_run, cmd_sweep, run_theory, with_threads, CommonArgs, Status,
};
pub use config::ExperimentFile;

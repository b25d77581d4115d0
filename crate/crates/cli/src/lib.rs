//! Command-line front end for windowed (test-time local) conversion of
//! global pooling and normalization modules.

pub mod commands;
pub mod config;
pub mod error;

use clap::{Parser, Subcommand};

pub use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "tlc", version, about = "Windowed conversion of global feature statistics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Windowed mean, mean of squares, variance, max or strided mean.
    Aggregate(commands::AggregateArgs),
    /// Run a module in global and windowed mode and compare.
    Convert(commands::ConvertArgs),
    /// Patch-versus-image statistic shift experiment.
    Stats(commands::StatsArgs),
    /// Derive per-layer windows from a calibration size.
    Calibrate(commands::CalibrateArgs),
    /// Time summed-area against direct windowed means.
    Bench(commands::BenchArgs),
    /// Global versus windowed Wiener restoration on a synthetic scene.
    Demo(commands::DemoArgs),
    /// Overlapping-tile transform and fusion.
    Fuse(commands::FuseArgs),
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Aggregate(a) => commands::aggregate(a),
        Command::Convert(a) => commands::convert(a),
        Command::Stats(a) => commands::stats(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Bench(a) => commands::bench(a),
        Command::Demo(a) => commands::demo(a),
        Command::Fuse(a) => commands::fuse(a),
    }
}

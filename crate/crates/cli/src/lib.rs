//! Command-line front end. Each subcommand resolves its settings (defaults,
//! then `--config` file, then flags), writes its artifacts into `--out`, and
//! maps failures onto fixed exit codes: 2 configuration, 3 data, 4 numerical.

pub mod bench;
pub mod config;
pub mod diagnose;
pub mod error;
pub mod generate;
pub mod metrics;
pub mod train;

use clap::{Parser, Subcommand};

pub use bench::{cmd_bench, BenchArgs, BenchSettings, BenchSummary};
pub use config::{GlobalArgs, RunConfig};
pub use diagnose::{cmd_diagnose, DiagnoseArgs, DiagnoseSettings, Diagnostics};
pub use error::{CliError, Result};
pub use generate::{cmd_generate, GenerateArgs, GenerateSettings};
pub use metrics::{cmd_metrics, MetricsArgs, MetricsOutput, MetricsSettings};
pub use train::{cmd_train, TrainArgs, TrainSettings, TrainSummary};

#[derive(Parser, Debug)]
#[command(name = "photon-dfa", version, about = "Feedback-alignment training with a simulated optical projector")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train an MLP or a transformer and write its trace and checkpoint.
    Train(TrainArgs),
    /// Check projector linearity, matrix statistics, threshold search and drift.
    Diagnose(DiagnoseArgs),
    /// Time training over a width/depth grid and fit the scaling.
    Bench(BenchArgs),
    /// Sample text from a transformer checkpoint.
    Generate(GenerateArgs),
    /// Latitude-weighted error metrics between two grid fields.
    Metrics(MetricsArgs),
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Train(a) => cmd_train(g, a).map(drop),
        Command::Diagnose(a) => cmd_diagnose(g, a).map(drop),
        Command::Bench(a) => cmd_bench(g, a).map(drop),
        Command::Generate(a) => cmd_generate(g, a).map(drop),
        Command::Metrics(a) => cmd_metrics(g, a).map(drop),
    }
}

//! Command-line pipelines over the sampling and evaluation engine.
//!
//! One binary, subcommand style. Every sampling subcommand takes a
//! mandatory 64-bit seed and derives one independent generator per sample,
//! so outputs are byte-identical across re-runs and worker counts. Runs
//! that produce artifacts write a `config.echo` file of `key=value` lines
//! capturing all effective parameters.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

mod commands;
mod echo;
mod par;
mod scenes;

pub use commands::report::{balance_report, group_tiles};
pub use commands::stats::BAND_ROWS as STATS_BAND_ROWS;

#[derive(Parser, Debug)]
#[command(
    name = "longtile",
    version,
    about = "Sampling and evaluation pipelines for long-tail ultra-high-resolution labeled rasters"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(clap::Subcommand, Debug)]
enum Command {
    /// Generate a synthetic long-tail scene.
    Synth(commands::synth::Args),
    /// Class histogram, shares, and tail report for scenes.
    Stats(commands::stats::Args),
    /// Draw multi-scale anchored training samples into a tile archive.
    #[command(name = "msar-sample")]
    MsarSample(commands::msar_sample::Args),
    /// Build a ranked region index from masks or labeled scenes.
    #[command(name = "regions-build")]
    RegionsBuild(commands::regions_build::Args),
    /// Sample region tiles from a ranked index.
    #[command(name = "regions-sample")]
    RegionsSample(commands::regions_sample::Args),
    /// Compose mixed training batches with balance diagnostics.
    Batch(commands::batch::Args),
    /// Per-class IoU and mIoU of a prediction plane against ground truth.
    Eval(commands::eval::Args),
    /// Dump the sliding-window plan for a raster extent.
    Plan(commands::plan::Args),
    /// Self-check of the fusion kernels (shapes, bounds, gradients).
    #[command(name = "fuse-selfcheck")]
    FuseSelfcheck(commands::selfcheck::Args),
}

/// Parses and runs a full command line (including argv[0]); returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Command::Synth(args) => commands::synth::run(&args),
        Command::Stats(args) => commands::stats::run(&args),
        Command::MsarSample(args) => commands::msar_sample::run(&args),
        Command::RegionsBuild(args) => commands::regions_build::run(&args),
        Command::RegionsSample(args) => commands::regions_sample::run(&args),
        Command::Batch(args) => commands::batch::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Plan(args) => commands::plan::run(&args),
        Command::FuseSelfcheck(args) => commands::selfcheck::run(&args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

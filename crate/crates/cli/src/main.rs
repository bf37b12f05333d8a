//! `crowdtrack` command line: tracking, pose smoothing, evaluation, grid
//! search, synthetic scenario generation and SVG overlays.
//!
//! Exit codes are a stable contract for scripts: 0 success, 2 missing or
//! unreadable input, 3 validation/configuration error.

mod commands;
mod config;
mod util;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "crowdtrack", version, about = "Tracking-by-detection pipeline tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Associate detections into identity tracks (fusion, NMS, smoothing, tracking)
    Track(commands::track::TrackArgs),
    /// Attach track ids to poses and smooth them temporally
    Pose(commands::pose::PoseArgs),
    /// Score tracks, detections and poses against ground truth
    Eval(commands::eval::EvalArgs),
    /// Grid-search tracker parameters on sequences with ground truth
    Gridsearch(commands::gridsearch::GridsearchArgs),
    /// Generate a self-contained synthetic scenario directory
    Synth(commands::synth::SynthArgs),
    /// Emit per-frame SVG overlays of boxes, ids and poses
    Overlay(commands::overlay::OverlayArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(3);
        }
    };
    let result = match cli.command {
        Command::Track(args) => commands::track::run(args),
        Command::Pose(args) => commands::pose::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Gridsearch(args) => commands::gridsearch::run(args),
        Command::Synth(args) => commands::synth::run(args),
        Command::Overlay(args) => commands::overlay::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

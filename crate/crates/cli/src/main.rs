//! `vitalcam`: synthetic scenes, offline analysis, magnification, the
//! ingestion server and expression-model tooling.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime error.

mod args;
mod cmd;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Rejected input that the user can fix by changing flags.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl fmt::Display) -> anyhow::Error {
    Usage(msg.to_string()).into()
}

#[derive(Parser)]
#[command(name = "vitalcam", version, about = "Heart rate and expression from facial video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic pulse scene as an RVID stream.
    Synth(cmd::synth::SynthArgs),
    /// Estimate heart rate over an RVID stream; JSON lines on stdout.
    Analyze(Box<cmd::analyze::AnalyzeArgs>),
    /// Magnify in-band colour changes of an RVID stream.
    Amplify(cmd::amplify::AmplifyArgs),
    /// Run the frame-batch HTTP service until interrupted.
    Serve(cmd::serve::ServeArgs),
    /// Expression model tools.
    #[command(subcommand)]
    Fer(cmd::fer::FerCommand),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd::synth::run(a),
        Command::Analyze(a) => cmd::analyze::run(*a),
        Command::Amplify(a) => cmd::amplify::run(a),
        Command::Serve(a) => cmd::serve::run(a),
        Command::Fer(c) => cmd::fer::run(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

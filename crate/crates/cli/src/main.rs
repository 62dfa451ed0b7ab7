//! `avd` command line: synthetic dataset generation, joint training,
//! distilled-image export, downstream evaluation, and gradient verification.
//!
//! Exit codes: 0 on success, 2 for usage and configuration mistakes
//! (including malformed flags, which clap also reports as 2), 1 for
//! failures at runtime such as corrupt files or diverging training.

mod distill;
mod eval;
mod gen_data;
mod gradcheck;
mod train;

use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "avd", version, about = "Distill video clips into single trainable images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic motion-labelled video dataset
    GenData(gen_data::GenDataArgs),
    /// Train encoder, decoder, and teacher from a run config file
    Train(train::TrainArgs),
    /// Export one distilled image per source video as PPM files
    Distill(distill::DistillArgs),
    /// Compare clip representations with a downstream 2D classifier
    Eval(eval::EvalArgs),
    /// Check every differentiable op against finite differences
    Gradcheck(gradcheck::GradcheckArgs),
}

/// A command failure carrying its process exit code.
#[derive(Debug)]
enum Failure {
    /// The invocation or configuration is wrong; exit code 2.
    Usage(String),
    /// A well-formed request failed while running; exit code 1.
    Runtime(String),
}

impl Failure {
    fn usage(err: impl std::fmt::Display) -> Failure {
        Failure::Usage(err.to_string())
    }

    fn runtime(err: impl std::fmt::Display) -> Failure {
        Failure::Runtime(err.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Rejects a user-named input path that is not an existing file.
fn require_file(path: &Path, what: &str) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} not found: {}", path.display())))
    }
}

/// Loads a checkpoint into freshly shaped parameters for the given frame size.
///
/// Entry-set or shape disagreements mean the checkpoint belongs to a different
/// architecture than the data implies — a usage mistake, not a corrupt file.
fn load_params(
    checkpoint: &Path,
    height: usize,
    width: usize,
) -> Result<avd_core::model::AvdParams<f32>, Failure> {
    use avd_core::checkpoint::{load_checkpoint, CheckpointError};
    use avd_core::model::{ArchConfig, AvdParams};

    require_file(checkpoint, "checkpoint file")?;
    let config = ArchConfig::new(height, width).map_err(Failure::usage)?;
    let mut params = AvdParams::init(0, &config);
    load_checkpoint(&mut params, checkpoint).map_err(|e| match e {
        CheckpointError::UnknownEntry(_)
        | CheckpointError::MissingEntry(_)
        | CheckpointError::ShapeMismatch { .. } => Failure::Usage(format!(
            "checkpoint {} does not fit {height}x{width} data: {e}",
            checkpoint.display()
        )),
        other => Failure::runtime(other),
    })?;
    Ok(params)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => gen_data::run(&args),
        Command::Train(args) => train::run(&args),
        Command::Distill(args) => distill::run(&args),
        Command::Eval(args) => eval::run(&args),
        Command::Gradcheck(args) => gradcheck::run(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

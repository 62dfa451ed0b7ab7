//! `avd gen-data`: write a synthetic motion-labelled dataset to one file.

use std::path::PathBuf;

use avd_core::data::{generate_dataset, save_dataset, DatasetVariant, SyntheticDatasetSpec};
use clap::{Args, ValueEnum};

use crate::{CmdResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackgroundArg {
    /// Smooth two-corner color gradients.
    Gradient,
    /// Diagonal stripes of random width and phase.
    Stripes,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Motion classes: 4 (up/down/left/right) or 2 (up/down)
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Source videos per class
    #[arg(long, default_value_t = 16)]
    per_class: usize,
    /// Frames per source video
    #[arg(long, default_value_t = 48)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    /// Slowest drift in pixels per frame
    #[arg(long, default_value_t = 0.15)]
    speed_min: f64,
    /// Fastest drift in pixels per frame
    #[arg(long, default_value_t = 0.3)]
    speed_max: f64,
    /// Additive Gaussian pixel noise sigma
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Background family; train and transfer sets should differ here
    #[arg(long, value_enum, default_value_t = BackgroundArg::Gradient)]
    background: BackgroundArg,
    /// Output dataset file
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &GenDataArgs) -> CmdResult {
    let spec = SyntheticDatasetSpec {
        num_classes: args.classes,
        clips_per_class: args.per_class,
        frames_per_source: args.frames,
        height: args.height,
        width: args.width,
        speed_min: args.speed_min,
        speed_max: args.speed_max,
        noise_sigma: args.noise,
        seed: args.seed,
        variant: match args.background {
            BackgroundArg::Gradient => DatasetVariant::Gradient,
            BackgroundArg::Stripes => DatasetVariant::Stripes,
        },
    };
    let dataset = generate_dataset::<f32>(&spec).map_err(Failure::usage)?;
    save_dataset(&dataset, &args.out).map_err(Failure::runtime)?;
    println!(
        "wrote {} videos ({} classes, {} frames at {}x{}) to {}",
        dataset.len(),
        dataset.num_classes,
        dataset.frames,
        dataset.height,
        dataset.width,
        args.out.display()
    );
    Ok(())
}

//! `avd distill`: run the trained encoder over every source video and save
//! the distilled images as binary PPM files.

use std::fs;
use std::path::PathBuf;

use avd_core::data::{load_dataset, sample_clip, SampleMode};
use avd_core::model::{encode, Mode, SourceId, CLIP_LEN};
use avd_core::ppm::save_ppm;
use clap::Args;

use crate::{load_params, require_file, CmdResult, Failure};

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Trained model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset whose videos are distilled
    #[arg(long)]
    dataset: PathBuf,
    /// Directory receiving one `clip_<i>_class_<c>.ppm` per video
    #[arg(long)]
    out_dir: PathBuf,
}

pub fn run(args: &DistillArgs) -> CmdResult {
    require_file(&args.dataset, "dataset file")?;
    let dataset = load_dataset::<f32>(&args.dataset).map_err(Failure::runtime)?;
    let mut params = load_params(&args.checkpoint, dataset.height, dataset.width)?;

    fs::create_dir_all(&args.out_dir).map_err(Failure::runtime)?;
    for (index, video) in dataset.videos.iter().enumerate() {
        let clip = sample_clip(video, SourceId(index as u32), CLIP_LEN, SampleMode::Uniform, 0)
            .map_err(Failure::runtime)?;
        let image = encode(&mut params.encoder, &clip, Mode::Eval).map_err(Failure::runtime)?;
        let path = args.out_dir.join(format!("clip_{index}_class_{}.ppm", video.label));
        save_ppm(image.image(), &path).map_err(Failure::runtime)?;
    }
    println!("wrote {} images to {}", dataset.len(), args.out_dir.display());
    Ok(())
}

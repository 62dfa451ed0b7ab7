//! `avd eval`: train identical downstream classifiers on competing clip
//! representations and report their test accuracies as CSV.
//!
//! The classifier trains on every video of `--train-data` and is scored on
//! every video of `--test-data`, so the two files form a leak-free split by
//! construction. `--cross` adds a second train/test pair from another domain
//! and scores the same encoder on both.

use std::fs;
use std::path::{Path, PathBuf};

use avd_core::data::{load_dataset, Dataset};
use avd_core::eval::{
    compare_representations, cross_dataset_eval, ClassifierConfig, EvalConfig, EvalError,
    EvalReport, Split,
};
use avd_core::model::SourceId;
use avd_core::textfmt::format_g6;
use clap::Args;

use crate::{load_params, require_file, CmdResult, Failure};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained model checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset whose videos train the classifiers
    #[arg(long)]
    train_data: PathBuf,
    /// Dataset whose videos are scored
    #[arg(long)]
    test_data: PathBuf,
    /// Transfer-domain train and test datasets for a cross-domain run
    #[arg(long, num_args = 2, value_names = ["TRAIN", "TEST"])]
    cross: Option<Vec<PathBuf>>,
    /// Report CSV destination
    #[arg(long)]
    out: PathBuf,
    /// Seeds classifier init, shuffling, and clip sampling
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Classifier training epochs
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Classifier learning rate
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Classifier batch size
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
}

/// Validation-style evaluation errors are the caller's mistake; numeric
/// blowups and shape faults deep in training are runtime failures.
fn classify_eval_error(err: EvalError) -> Failure {
    match err {
        EvalError::Train(_) | EvalError::Model(_) | EvalError::Tensor(_) | EvalError::Data(_) => {
            Failure::runtime(err)
        }
        other => Failure::usage(other),
    }
}

/// Concatenates a train and a test file into one dataset plus the split
/// that keeps them apart.
fn joined_split(
    train_path: &Path,
    test_path: &Path,
) -> Result<(Dataset<f32>, Split), Failure> {
    require_file(train_path, "dataset file")?;
    require_file(test_path, "dataset file")?;
    let train = load_dataset::<f32>(train_path).map_err(Failure::runtime)?;
    let test = load_dataset::<f32>(test_path).map_err(Failure::runtime)?;
    for (name, a, b) in [
        ("classes", train.num_classes, test.num_classes),
        ("frame counts", train.frames, test.frames),
        ("heights", train.height, test.height),
        ("widths", train.width, test.width),
    ] {
        if a != b {
            return Err(Failure::Usage(format!(
                "{} and {} disagree on {name}: {a} vs {b}",
                train_path.display(),
                test_path.display()
            )));
        }
    }
    let n_train = train.len();
    let num_classes = train.num_classes;
    let (frames, height, width) = (train.frames, train.height, train.width);
    let mut videos = train.videos;
    videos.extend(test.videos);
    let total = videos.len();
    let combined = Dataset::with_dims(videos, num_classes, frames, height, width)
        .map_err(Failure::runtime)?;
    let split = Split {
        train: (0..n_train).map(|i| SourceId(i as u32)).collect(),
        test: (n_train..total).map(|i| SourceId(i as u32)).collect(),
    };
    Ok((combined, split))
}

pub fn run(args: &EvalArgs) -> CmdResult {
    let (dataset, split) = joined_split(&args.train_data, &args.test_data)?;
    let params = load_params(&args.checkpoint, dataset.height, dataset.width)?;
    let config = EvalConfig {
        classifier: ClassifierConfig {
            lr: args.lr,
            epochs: args.epochs,
            batch_size: args.batch_size,
            seed: args.seed,
            ..ClassifierConfig::default()
        },
        sample_seed: args.seed,
    };

    let report: EvalReport = match &args.cross {
        Some(pair) => {
            let (transfer, transfer_split) = joined_split(&pair[0], &pair[1])?;
            cross_dataset_eval(&params.encoder, &dataset, &split, &transfer, &transfer_split, &config)
                .map_err(classify_eval_error)?
        }
        None => compare_representations(&dataset, &params.encoder, &split, &config)
            .map_err(classify_eval_error)?,
    };

    fs::write(&args.out, report.to_csv()).map_err(Failure::runtime)?;
    for result in &report.results {
        println!("{} {}", result.label, format_g6(result.accuracy));
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

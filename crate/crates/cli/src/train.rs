//! `avd train`: run the joint loop from a config file, then write the
//! checkpoint and the per-step loss log next to each other.

use std::fs;
use std::path::PathBuf;

use avd_core::checkpoint::save_checkpoint;
use avd_core::data::{load_dataset, Dataset};
use avd_core::runconfig::{ConfigError, RunConfig};
use avd_core::training::{train, StepRecord, TrainError, TrainLog};
use clap::Args;

use crate::{require_file, CmdResult, Failure};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file (`key = value` lines)
    #[arg(long)]
    config: PathBuf,
}

/// Mean of one field over an epoch's records.
fn epoch_mean(records: &[StepRecord], field: fn(&StepRecord) -> f64) -> f64 {
    records.iter().map(field).sum::<f64>() / records.len() as f64
}

/// Names the last step that completed before a non-finite loss appeared.
fn last_good_step(epoch: usize, step: usize, steps_per_epoch: usize) -> String {
    if step > 0 {
        format!("epoch {epoch} step {}", step - 1)
    } else if epoch > 0 {
        format!("epoch {} step {}", epoch - 1, steps_per_epoch.saturating_sub(1))
    } else {
        "none".to_string()
    }
}

fn describe_train_error(err: TrainError, dataset: &Dataset<f32>, batch_size: usize) -> Failure {
    match err {
        TrainError::NonFiniteLoss { which, value, epoch, step } => {
            let steps_per_epoch = dataset.len().div_ceil(batch_size.max(1));
            Failure::Runtime(format!(
                "{which} loss became {value} at epoch {epoch} step {step}; \
                 last good step: {}",
                last_good_step(epoch, step, steps_per_epoch)
            ))
        }
        other => Failure::usage(other),
    }
}

pub fn run(args: &TrainArgs) -> CmdResult {
    require_file(&args.config, "config file")?;
    let config = RunConfig::load(&args.config).map_err(|e| match e {
        ConfigError::Io(io) => Failure::runtime(io),
        other => Failure::usage(other),
    })?;
    require_file(&config.dataset, "dataset file")?;
    let dataset = load_dataset::<f32>(&config.dataset).map_err(Failure::runtime)?;

    let (params, log) = train(&dataset, &config.train)
        .map_err(|e| describe_train_error(e, &dataset, config.train.batch_size))?;
    print_epoch_summary(&log);

    fs::create_dir_all(&config.out_dir).map_err(Failure::runtime)?;
    let checkpoint = config.out_dir.join("model.avdc");
    save_checkpoint(&params, &checkpoint).map_err(Failure::runtime)?;
    let log_path = config.out_dir.join("train_log.csv");
    fs::write(&log_path, log.to_csv()).map_err(Failure::runtime)?;
    println!("wrote {} and {}", checkpoint.display(), log_path.display());
    Ok(())
}

fn print_epoch_summary(log: &TrainLog) {
    let mut rest = log.records();
    while let Some(first) = rest.first() {
        let epoch = first.epoch;
        let end = rest.partition_point(|r| r.epoch == epoch);
        let (this, tail) = rest.split_at(end);
        println!(
            "epoch {epoch}: avd {:.4} recon {:.4} teacher {:.4} gen {:.4} real {:.3} fake {:.3}",
            epoch_mean(this, |r| r.avd_loss),
            epoch_mean(this, |r| r.recon_loss),
            epoch_mean(this, |r| r.teacher_loss),
            epoch_mean(this, |r| r.gen_loss),
            epoch_mean(this, |r| r.real_score),
            epoch_mean(this, |r| r.fake_score),
        );
        rest = tail;
    }
}

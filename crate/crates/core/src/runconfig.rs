//! Plain-text run configuration: `key = value` lines plus `#` comments.
//! Zero parsing dependencies, trivially diffable, and strict — unknown or
//! repeated keys are errors, missing keys fall back to documented defaults.

use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::training::{TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line} is not `key = value`: {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key {key:?} appears twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: cannot parse {value:?} for key {key:?}")]
    BadValue { line: usize, key: String, value: String },
    #[error(transparent)]
    Invalid(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A full training run: hyperparameters plus file locations.
///
/// Defaults: [`TrainConfig::default`] for the hyperparameters, dataset
/// `train.avdd`, output directory `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            dataset: PathBuf::from("train.avdd"),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses and validates config text. Every key is optional; each may
    /// appear once.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut config = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| ConfigError::MalformedLine { line, text: raw.to_string() })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
            let bad = || ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
            };
            match key {
                "lambda" => config.train.lambda = value.parse().map_err(|_| bad())?,
                "lr" => config.train.lr = value.parse().map_err(|_| bad())?,
                "momentum" => config.train.momentum = value.parse().map_err(|_| bad())?,
                "lr_decay" => config.train.lr_decay = value.parse().map_err(|_| bad())?,
                "epochs" => config.train.epochs = value.parse().map_err(|_| bad())?,
                "batch_size" => config.train.batch_size = value.parse().map_err(|_| bad())?,
                "seed" => config.train.seed = value.parse().map_err(|_| bad())?,
                "teacher_updates" => {
                    config.train.teacher_updates_per_batch = value.parse().map_err(|_| bad())?
                }
                "dataset" => config.dataset = PathBuf::from(value),
                "out_dir" => config.out_dir = PathBuf::from(value),
                _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
            }
        }
        config.train.validate()?;
        Ok(config)
    }

    /// Reads and parses a config file.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Renders the config as text that [`parse`](Self::parse) accepts.
    pub fn to_text(&self) -> String {
        format!(
            "lambda = {}\nlr = {}\nmomentum = {}\nlr_decay = {}\n\
             epochs = {}\nbatch_size = {}\nseed = {}\nteacher_updates = {}\n\
             dataset = {}\nout_dir = {}\n",
            self.train.lambda,
            self.train.lr,
            self.train.momentum,
            self.train.lr_decay,
            self.train.epochs,
            self.train.batch_size,
            self.train.seed,
            self.train.teacher_updates_per_batch,
            self.dataset.display(),
            self.out_dir.display(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_comment_only_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        let commented = "# a run\n\n  # nothing else\n";
        assert_eq!(RunConfig::parse(commented).unwrap(), RunConfig::default());
    }

    #[test]
    fn every_key_is_honoured() {
        let text = "# smoke run\n\
                    lambda = 0.75\n\
                    lr = 0.001\n\
                    momentum = 0.8\n\
                    lr_decay = 0.5\n\
                    epochs = 3\n\
                    batch_size = 4\n\
                    seed = 42\n\
                    teacher_updates = 2\n\
                    dataset = data/train.avdd\n\
                    out_dir = runs/a\n";
        let config = RunConfig::parse(text).unwrap();
        assert_eq!(
            config,
            RunConfig {
                train: TrainConfig {
                    lambda: 0.75,
                    lr: 0.001,
                    momentum: 0.8,
                    lr_decay: 0.5,
                    epochs: 3,
                    batch_size: 4,
                    seed: 42,
                    teacher_updates_per_batch: 2,
                },
                dataset: PathBuf::from("data/train.avdd"),
                out_dir: PathBuf::from("runs/a"),
            }
        );
        assert_eq!(RunConfig::parse(&config.to_text()).unwrap(), config);
    }

    #[test]
    fn strictness_catches_each_mistake() {
        assert!(matches!(
            RunConfig::parse("episodes = 3\n"),
            Err(ConfigError::UnknownKey { line: 1, key }) if key == "episodes"
        ));
        assert!(matches!(
            RunConfig::parse("seed = 1\nseed = 2\n"),
            Err(ConfigError::DuplicateKey { line: 2, .. })
        ));
        assert!(matches!(
            RunConfig::parse("epochs = three\n"),
            Err(ConfigError::BadValue { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("just some words\n"),
            Err(ConfigError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("lambda = 1.5\n"),
            Err(ConfigError::Invalid(TrainError::LambdaOutOfRange(_)))
        ));
    }
}

//! Representation comparison and cross-dataset transfer. One classifier per
//! representation kind, identical architecture, config, and seeds throughout,
//! on a train/test split that keeps source videos strictly apart.

use std::collections::HashSet;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_clip, Dataset, SampleMode};
use crate::model::{EncoderParams, SourceId, CLIP_LEN};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::textfmt::format_g6;

use super::classifier::{evaluate, train_classifier, ClassifierConfig};
use super::represent::{represent, RepresentationKind};
use super::EvalError;

// ── Splits ──

/// A train/test partition over source videos, never over clips, so no video
/// leaks pixels into both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<SourceId>,
    pub test: Vec<SourceId>,
}

impl Split {
    /// Holds out `test_per_class` videos of every class, seeded shuffle.
    pub fn by_source<T: Scalar>(
        dataset: &Dataset<T>,
        test_per_class: usize,
        seed: u64,
    ) -> Result<Split, EvalError> {
        if test_per_class == 0 {
            return Err(EvalError::EmptyTestSplit);
        }
        let mut by_label = vec![Vec::new(); dataset.num_classes];
        for (index, video) in dataset.videos.iter().enumerate() {
            by_label[video.label].push(SourceId(index as u32));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut split = Split { train: Vec::new(), test: Vec::new() };
        for (label, mut ids) in by_label.into_iter().enumerate() {
            if ids.len() <= test_per_class {
                return Err(EvalError::TooFewPerClass {
                    label,
                    available: ids.len(),
                    requested: test_per_class,
                });
            }
            ids.shuffle(&mut rng);
            split.test.extend_from_slice(&ids[..test_per_class]);
            split.train.extend_from_slice(&ids[test_per_class..]);
        }
        Ok(split)
    }

    /// Checks ids, disjointness, and that the train side can be learned from.
    pub fn validate<T: Scalar>(&self, dataset: &Dataset<T>) -> Result<(), EvalError> {
        if self.train.is_empty() {
            return Err(EvalError::EmptyTrainSplit);
        }
        if self.test.is_empty() {
            return Err(EvalError::EmptyTestSplit);
        }
        for &SourceId(id) in self.train.iter().chain(&self.test) {
            if id as usize >= dataset.len() {
                return Err(EvalError::SourceOutOfRange { id, videos: dataset.len() });
            }
        }
        let train: HashSet<u32> = self.train.iter().map(|s| s.0).collect();
        for &SourceId(id) in &self.test {
            if train.contains(&id) {
                return Err(EvalError::SplitLeakage(id));
            }
        }
        let labels: HashSet<usize> = self
            .train
            .iter()
            .map(|s| dataset.videos[s.0 as usize].label)
            .collect();
        if labels.len() < 2 {
            return Err(EvalError::SingleClassTrainingSet);
        }
        Ok(())
    }
}

// ── Report ──

/// Shared settings for one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub classifier: ClassifierConfig,
    /// Seeds clip cutting and random-frame picks, per source video.
    pub sample_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { classifier: ClassifierConfig::default(), sample_seed: 0 }
    }
}

/// One scored classifier run, labelled by what it consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledResult {
    pub label: String,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

/// The split a result set was computed on, kept for reproducibility.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRecord {
    pub name: String,
    pub train: Vec<SourceId>,
    pub test: Vec<SourceId>,
}

/// Accuracies, confusion matrices, splits, and the config that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub results: Vec<LabeledResult>,
    pub splits: Vec<SplitRecord>,
    pub config: EvalConfig,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "kind,accuracy";

    pub fn accuracy(&self, label: &str) -> Option<f64> {
        self.results.iter().find(|r| r.label == label).map(|r| r.accuracy)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.results {
            writeln!(out, "{},{}", r.label, format_g6(r.accuracy))?;
        }
        for r in &self.results {
            writeln!(out)?;
            writeln!(out, "# confusion {} (rows true class, columns predicted)", r.label)?;
            for row in &r.confusion {
                let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                writeln!(out, "{}", cells.join(","))?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

// ── Comparison harness ──

/// Represents every video of one split side as images plus labels.
fn side_images<T: Scalar>(
    dataset: &Dataset<T>,
    side: &[SourceId],
    kind: RepresentationKind,
    mut encoder: Option<&mut EncoderParams<T>>,
    sample_seed: u64,
) -> Result<(Tensor<T>, Vec<usize>), EvalError> {
    let mut data = Vec::with_capacity(side.len() * 3 * dataset.height * dataset.width);
    let mut labels = Vec::with_capacity(side.len());
    for &source in side {
        let video = &dataset.videos[source.0 as usize];
        let clip = sample_clip(video, source, CLIP_LEN, SampleMode::Uniform, sample_seed)?;
        let image = represent(kind, &clip, encoder.as_deref_mut(), sample_seed)?;
        data.extend_from_slice(image.data());
        labels.push(video.label);
    }
    let images = Tensor::new(vec![side.len(), 3, dataset.height, dataset.width], data)?;
    Ok((images, labels))
}

fn run_one<T: Scalar>(
    dataset: &Dataset<T>,
    split: &Split,
    kind: RepresentationKind,
    mut encoder: Option<&mut EncoderParams<T>>,
    config: &EvalConfig,
    label: &str,
) -> Result<LabeledResult, EvalError> {
    let (train_images, train_labels) =
        side_images(dataset, &split.train, kind, encoder.as_deref_mut(), config.sample_seed)?;
    let (test_images, test_labels) =
        side_images(dataset, &split.test, kind, encoder.as_deref_mut(), config.sample_seed)?;
    let classifier =
        train_classifier(&train_images, &train_labels, dataset.num_classes, &config.classifier)?;
    let scored = evaluate(&classifier, &test_images, &test_labels)?;
    Ok(LabeledResult {
        label: label.to_string(),
        accuracy: scored.accuracy,
        confusion: scored.confusion,
    })
}

/// Trains and scores one classifier per representation kind on the same
/// split, so the representation is the only variable.
pub fn compare_representations<T: Scalar>(
    dataset: &Dataset<T>,
    encoder: &EncoderParams<T>,
    split: &Split,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    split.validate(dataset)?;
    let mut enc = encoder.clone();
    let mut results = Vec::with_capacity(RepresentationKind::ALL.len());
    for kind in RepresentationKind::ALL {
        let enc_opt =
            (kind == RepresentationKind::Distilled).then_some(&mut enc);
        results.push(run_one(dataset, split, kind, enc_opt, config, kind.name())?);
    }
    Ok(EvalReport {
        results,
        splits: vec![SplitRecord {
            name: "primary".to_string(),
            train: split.train.clone(),
            test: split.test.clone(),
        }],
        config: config.clone(),
    })
}

/// Scores the distilled representation on its own dataset and on a transfer
/// dataset, both through the same encoder.
pub fn cross_dataset_eval<T: Scalar>(
    encoder: &EncoderParams<T>,
    in_domain: &Dataset<T>,
    in_split: &Split,
    transfer: &Dataset<T>,
    transfer_split: &Split,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if in_domain.num_classes != transfer.num_classes {
        return Err(EvalError::LabelSetMismatch {
            in_domain: in_domain.num_classes,
            transfer: transfer.num_classes,
        });
    }
    in_split.validate(in_domain)?;
    transfer_split.validate(transfer)?;
    let mut enc = encoder.clone();
    let kind = RepresentationKind::Distilled;
    let results = vec![
        run_one(in_domain, in_split, kind, Some(&mut enc), config, "distilled_in_domain")?,
        run_one(transfer, transfer_split, kind, Some(&mut enc), config, "distilled_cross_domain")?,
    ];
    Ok(EvalReport {
        results,
        splits: vec![
            SplitRecord {
                name: "in_domain".to_string(),
                train: in_split.train.clone(),
                test: in_split.test.clone(),
            },
            SplitRecord {
                name: "cross_domain".to_string(),
                train: transfer_split.train.clone(),
                test: transfer_split.test.clone(),
            },
        ],
        config: config.clone(),
    })
}

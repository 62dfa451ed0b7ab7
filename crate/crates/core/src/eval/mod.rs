//! Downstream evaluation: a small 2D classifier consumes competing clip
//! representations — a single random frame, the temporal mean, or the
//! distilled image — under identical architecture, config, and seeds, so
//! accuracy gaps are attributable to the representation alone.

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;
use crate::tensor::TensorError;
use crate::training::TrainError;

mod classifier;
mod compare;
mod represent;

pub use classifier::{
    evaluate, train_classifier, ClassifierConfig, ClassifierIds, ClassifierParams, Evaluation,
};
pub use compare::{
    compare_representations, cross_dataset_eval, EvalConfig, EvalReport, LabeledResult, Split,
    SplitRecord,
};
pub use represent::{represent, RepresentationKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("distilled representation requires encoder parameters")]
    MissingEncoder,
    #[error("training set holds a single class; need at least two")]
    SingleClassTrainingSet,
    #[error("classifier needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("image set is empty")]
    EmptyImageSet,
    #[error("{images} images but {labels} labels")]
    LengthMismatch { images: usize, labels: usize },
    #[error("images have shape {shape:?}, want [N,3,{height},{width}]")]
    ImageShape { shape: Vec<usize>, height: usize, width: usize },
    #[error("label {label} at index {index} outside {num_classes} classes")]
    LabelOutOfRange { index: usize, label: usize, num_classes: usize },
    #[error("split names source {id} but the dataset has {videos} videos")]
    SourceOutOfRange { id: u32, videos: usize },
    #[error("source {0} appears in both train and test splits")]
    SplitLeakage(u32),
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("test split is empty")]
    EmptyTestSplit,
    #[error("class {label} has {available} videos, cannot hold out {requested}")]
    TooFewPerClass { label: usize, available: usize, requested: usize },
    #[error("datasets disagree on classes: {in_domain} vs {transfer}")]
    LabelSetMismatch { in_domain: usize, transfer: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

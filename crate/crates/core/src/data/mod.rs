//! Synthetic motion-labelled video data: generation, temporal clip sampling,
//! the real-frame pool the teacher scores against, and dataset persistence.
//!
//! The class of a video is its motion direction and nothing else — shape,
//! size, colours, start position, and background are drawn independently of
//! the label, so a single frame carries no class information.

use thiserror::Error;

use crate::binfmt::FormatError;
use crate::model::ModelError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

mod file;
mod sample;
mod synth;

pub use file::{load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use sample::{
    augment, build_frame_pool, hflip_clip, sample_clip, AugmentFlags, FramePool, SampleMode,
};
pub use synth::{generate_dataset, DatasetVariant, SyntheticDatasetSpec};

/// Motion-direction labels shared by every generated dataset.
pub const LABEL_UP: usize = 0;
pub const LABEL_DOWN: usize = 1;
pub const LABEL_LEFT: usize = 2;
pub const LABEL_RIGHT: usize = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{num_classes} classes unsupported; 2 (up/down) or 4 (all directions)")]
    UnsupportedClassCount { num_classes: usize },
    #[error("need at least one clip per class")]
    NoClips,
    #[error("{frames} frames per source below the minimum {min}")]
    TooFewFrames { frames: usize, min: usize },
    #[error("frame {height}x{width} too small for a moving shape (minimum {min}x{min})")]
    FrameTooSmall { height: usize, width: usize, min: usize },
    #[error("speed range [{min}, {max}] is not positive and ordered")]
    BadSpeedRange { min: f64, max: f64 },
    #[error("noise sigma {0} must be finite and non-negative")]
    BadNoiseSigma(f64),
    #[error("video {index} has shape {shape:?}, dataset expects [3,{frames},{height},{width}]")]
    VideoShape { index: usize, shape: Vec<usize>, frames: usize, height: usize, width: usize },
    #[error("video {index} has label {label}, dataset has {num_classes} classes")]
    LabelOutOfRange { index: usize, label: usize, num_classes: usize },
    #[error("dataset has no videos")]
    EmptyDataset,
    #[error("video has no frames")]
    EmptyVideo,
    #[error("clip length must be at least one frame")]
    EmptyClip,
    #[error("cannot cut a {clip_len}-frame window from {frames} frames")]
    WindowTooLong { frames: usize, clip_len: usize },
    #[error("frame pool of {requested} exceeds the {available} frames available")]
    PoolTooLarge { requested: usize, available: usize },
    #[error("frame pool must hold at least one frame")]
    EmptyPool,
    #[error("dimension {0} exceeds the u32 file-format limit")]
    DimensionTooLarge(usize),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// One full-length generated video `[3,F,H,W]` and its motion label.
#[derive(Debug, Clone)]
pub struct SourceVideo<T: Scalar> {
    pub frames: Tensor<T>,
    pub label: usize,
}

/// A set of source videos sharing one geometry and label alphabet.
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    pub videos: Vec<SourceVideo<T>>,
    pub num_classes: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Builds from a non-empty video list, taking the geometry from it.
    pub fn new(videos: Vec<SourceVideo<T>>, num_classes: usize) -> Result<Self, DataError> {
        let first = videos.first().ok_or(DataError::EmptyDataset)?;
        let shape = first.frames.shape().to_vec();
        Self::with_dims(videos, num_classes, shape[1], shape[2], shape[3])
    }

    /// Builds with an explicit geometry, which permits an empty video list.
    pub fn with_dims(
        videos: Vec<SourceVideo<T>>,
        num_classes: usize,
        frames: usize,
        height: usize,
        width: usize,
    ) -> Result<Self, DataError> {
        for (index, v) in videos.iter().enumerate() {
            if v.frames.shape() != [3, frames, height, width] {
                return Err(DataError::VideoShape {
                    index,
                    shape: v.frames.shape().to_vec(),
                    frames,
                    height,
                    width,
                });
            }
            if v.label >= num_classes {
                return Err(DataError::LabelOutOfRange { index, label: v.label, num_classes });
            }
        }
        Ok(Dataset { videos, num_classes, frames, height, width })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Total single frames across all videos.
    pub fn total_frames(&self) -> usize {
        self.videos.len() * self.frames
    }
}

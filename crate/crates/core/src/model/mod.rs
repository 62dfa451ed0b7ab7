//! The three networks: a 3D-convolutional encoder squeezing a video clip
//! into one RGB image, a transposed-convolutional decoder re-inflating it,
//! and a fully connected teacher judging images as real frames vs distilled.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Tensor, TensorError};

mod decoder;
mod encoder;
mod init;
mod teacher;

pub use decoder::{decode, DecoderParams};
pub use encoder::{encode, EncoderParams};
pub use init::init_params;
pub(crate) use init::Init;
pub use teacher::{discriminate, TeacherParams};

/// Frames per clip; every clip entering the encoder has exactly this many.
pub const CLIP_LEN: usize = 32;
/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Fraction of the batch statistic blended into the running statistic.
pub const BN_MOMENTUM: f64 = 0.1;
/// Negative-side slope of the decoder's LeakyReLU activations.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("spatial dims {height}x{width} below the 8x8 minimum")]
    SpatialTooSmall { height: usize, width: usize },
    #[error("clip values must lie in [0,1]")]
    ClipOutOfRange,
    #[error("image values must lie in [0,1]")]
    ImageOutOfRange,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Whether batch-norm layers use batch statistics (and update running ones)
/// or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Spatial resolution plus the channel plan of all three networks.
///
/// `encoder_channels` starts and ends at 3 (RGB in, RGB image out); the
/// decoder mirrors it in reverse. `teacher_widths` are the hidden widths
/// between the flattened image and the single-score output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchConfig {
    pub height: usize,
    pub width: usize,
    pub encoder_channels: [usize; 6],
    pub teacher_widths: [usize; 4],
}

impl ArchConfig {
    pub fn new(height: usize, width: usize) -> Result<Self, ModelError> {
        if height < 8 || width < 8 {
            return Err(ModelError::SpatialTooSmall { height, width });
        }
        Ok(ArchConfig {
            height,
            width,
            encoder_channels: [3, 16, 32, 32, 16, 3],
            teacher_widths: [256, 128, 64, 32],
        })
    }
}

/// Identifies which generated dataset a clip came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SourceId(pub u32);

/// One video clip [3, 32, H, W] with values in [0,1].
#[derive(Debug, Clone)]
pub struct VideoClip<T: Scalar> {
    volume: Tensor<T>,
    pub label: Option<usize>,
    pub source: SourceId,
}

impl<T: Scalar> VideoClip<T> {
    pub fn new(
        volume: Tensor<T>,
        label: Option<usize>,
        source: SourceId,
    ) -> Result<Self, ModelError> {
        let shape = volume.shape();
        let ok = shape.len() == 4 && shape[0] == 3 && shape[1] == CLIP_LEN;
        if !ok {
            return Err(TensorError::RankMismatch { expected: 4, shape: shape.to_vec() }.into());
        }
        if !volume.data().iter().all(|&v| v >= T::zero() && v <= T::one()) {
            return Err(ModelError::ClipOutOfRange);
        }
        Ok(VideoClip { volume, label, source })
    }

    pub fn volume(&self) -> &Tensor<T> {
        &self.volume
    }

    pub fn height(&self) -> usize {
        self.volume.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.volume.shape()[3]
    }
}

/// One distilled (or real) image [3, H, W] with values in [0,1].
#[derive(Debug, Clone)]
pub struct DistilledImage<T: Scalar> {
    image: Tensor<T>,
}

impl<T: Scalar> DistilledImage<T> {
    pub fn new(image: Tensor<T>) -> Result<Self, ModelError> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(TensorError::RankMismatch { expected: 3, shape: shape.to_vec() }.into());
        }
        if !image.data().iter().all(|&v| v >= T::zero() && v <= T::one()) {
            return Err(ModelError::ImageOutOfRange);
        }
        Ok(DistilledImage { image })
    }

    pub fn image(&self) -> &Tensor<T> {
        &self.image
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.image
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

/// Learnable batch-norm affine plus its (non-learnable) running statistics.
#[derive(Debug, Clone)]
pub struct BnParams<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Scalar> BnParams<T> {
    /// Identity-affine start: gamma 1, beta 0, running stats (0, 1).
    pub fn identity(channels: usize) -> Self {
        BnParams {
            gamma: Tensor::full(vec![channels], T::one()).with_grad(),
            beta: Tensor::zeros(vec![channels]).with_grad(),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], T::one()),
        }
    }
}

/// One convolutional block: kernel, bias, and (except final blocks) bn.
#[derive(Debug, Clone)]
pub struct ConvBlock<T: Scalar> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub bn: Option<BnParams<T>>,
}

/// Tape leaves recorded for one block during a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct BlockIds {
    pub kernel: ValueId,
    pub bias: ValueId,
    pub bn: Option<(ValueId, ValueId)>,
}

impl<T: Scalar> ConvBlock<T> {
    /// Routes tape gradients back into this block's parameter buffers.
    pub fn accumulate_grads(
        &mut self,
        tape: &Tape<T>,
        ids: &BlockIds,
    ) -> Result<(), TensorError> {
        harvest(tape, ids.kernel, &mut self.kernel)?;
        harvest(tape, ids.bias, &mut self.bias)?;
        if let (Some(bn), Some((gamma, beta))) = (&mut self.bn, ids.bn) {
            harvest(tape, gamma, &mut bn.gamma)?;
            harvest(tape, beta, &mut bn.beta)?;
        }
        Ok(())
    }

    /// Tensors of this block in declaration order, named for serialization.
    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut out: Vec<(&'static str, &mut Tensor<T>)> =
            vec![("kernel", &mut self.kernel), ("bias", &mut self.bias)];
        if let Some(bn) = &mut self.bn {
            out.push(("bn_gamma", &mut bn.gamma));
            out.push(("bn_beta", &mut bn.beta));
            out.push(("bn_mean", &mut bn.running_mean));
            out.push(("bn_var", &mut bn.running_var));
        }
        out
    }

    /// Read-only view of [`named_tensors_mut`](Self::named_tensors_mut).
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out: Vec<(&'static str, &Tensor<T>)> =
            vec![("kernel", &self.kernel), ("bias", &self.bias)];
        if let Some(bn) = &self.bn {
            out.push(("bn_gamma", &bn.gamma));
            out.push(("bn_beta", &bn.beta));
            out.push(("bn_mean", &bn.running_mean));
            out.push(("bn_var", &bn.running_var));
        }
        out
    }
}

/// Encoder, decoder, and teacher as one unit, as trained and checkpointed.
#[derive(Debug, Clone)]
pub struct AvdParams<T: Scalar> {
    pub encoder: EncoderParams<T>,
    pub decoder: DecoderParams<T>,
    pub teacher: TeacherParams<T>,
}

impl<T: Scalar> AvdParams<T> {
    /// Freshly initialized networks; one seed fixes all three.
    pub fn init(seed: u64, config: &ArchConfig) -> Self {
        let (encoder, decoder, teacher) = init_params(seed, config);
        AvdParams { encoder, decoder, teacher }
    }

    pub fn config(&self) -> &ArchConfig {
        &self.encoder.config
    }

    /// All tensors of all three networks, names prefixed per network.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (name, t) in self.encoder.named_tensors_mut() {
            out.push((format!("encoder.{name}"), t));
        }
        for (name, t) in self.decoder.named_tensors_mut() {
            out.push((format!("decoder.{name}"), t));
        }
        for (name, t) in self.teacher.named_tensors_mut() {
            out.push((format!("teacher.{name}"), t));
        }
        out
    }

    /// Read-only view of [`named_tensors_mut`](Self::named_tensors_mut).
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (name, t) in self.encoder.named_tensors() {
            out.push((format!("encoder.{name}"), t));
        }
        for (name, t) in self.decoder.named_tensors() {
            out.push((format!("decoder.{name}"), t));
        }
        for (name, t) in self.teacher.named_tensors() {
            out.push((format!("teacher.{name}"), t));
        }
        out
    }
}

/// Adds the tape's gradient for `id` (if any) onto a parameter tensor.
pub(crate) fn harvest<T: Scalar>(
    tape: &Tape<T>,
    id: ValueId,
    param: &mut Tensor<T>,
) -> Result<(), TensorError> {
    if let Some(g) = tape.grad(id) {
        param.accumulate_grad(g)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_config_rejects_tiny_resolutions() {
        assert!(matches!(
            ArchConfig::new(4, 32),
            Err(ModelError::SpatialTooSmall { height: 4, width: 32 })
        ));
        assert!(ArchConfig::new(8, 8).is_ok());
    }

    #[test]
    fn clip_requires_unit_range_and_clip_shape() {
        let good = Tensor::<f32>::zeros(vec![3, CLIP_LEN, 8, 8]);
        assert!(VideoClip::new(good, None, SourceId(0)).is_ok());
        let bad_shape = Tensor::<f32>::zeros(vec![3, 16, 8, 8]);
        assert!(VideoClip::new(bad_shape, None, SourceId(0)).is_err());
        let bad_range = Tensor::full(vec![3, CLIP_LEN, 8, 8], 1.5f32);
        assert!(matches!(
            VideoClip::new(bad_range, None, SourceId(0)),
            Err(ModelError::ClipOutOfRange)
        ));
    }

    #[test]
    fn image_validates_like_a_clip() {
        assert!(DistilledImage::new(Tensor::<f32>::zeros(vec![3, 8, 8])).is_ok());
        assert!(DistilledImage::new(Tensor::<f32>::zeros(vec![1, 8, 8])).is_err());
        assert!(DistilledImage::new(Tensor::full(vec![3, 8, 8], -0.1f32)).is_err());
    }
}
